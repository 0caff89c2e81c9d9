#include "mlsm/localizer.hpp"

#include <filesystem>
#include <fstream>
#include <queue>

namespace mlsm {

TensorF extract_region(const TensorF& image, const Heatmap& heatmap, float threshold_frac) {
  require(image.batch == 1, "extract_region: one image at a time");
  require(threshold_frac > 0.0f && threshold_frac < 1.0f,
          "extract_region: threshold fraction must be in (0, 1)");
  const int H = image.height, W = image.width;

  // Heatmap lives at feature resolution; bring it up to image resolution.
  TensorF heat(1, static_cast<int>(heatmap.values.rows()),
               static_cast<int>(heatmap.values.cols()), 1);
  for (int y = 0; y < heat.height; ++y)
    for (int x = 0; x < heat.width; ++x)
      heat.data(static_cast<Eigen::Index>(y) * heat.width + x, 0) = heatmap.values(y, x);
  TensorF up = (heat.height == H && heat.width == W) ? heat : bilinear_resize(heat, H, W);

  const float maxv = up.data.col(0).maxCoeff();
  if (maxv <= 0.0f) return image;  // all-zero heatmap: fall back to the full image
  const float thresh = threshold_frac * maxv;

  // Largest 4-connected component of the binary mask; ties keep the first
  // component in scan order.
  std::vector<int> label(static_cast<std::size_t>(H) * W, -1);
  auto masked = [&](int y, int x) {
    return up.data(static_cast<Eigen::Index>(y) * W + x, 0) >= thresh;
  };
  int best_count = 0, best_label = -1;
  std::vector<std::array<int, 4>> boxes;  // y0, y1, x0, x1 per component
  int n_labels = 0;
  std::queue<std::pair<int, int>> frontier;
  for (int sy = 0; sy < H; ++sy) {
    for (int sx = 0; sx < W; ++sx) {
      if (!masked(sy, sx) || label[static_cast<std::size_t>(sy) * W + sx] >= 0) continue;
      const int id = n_labels++;
      boxes.push_back({sy, sy, sx, sx});
      int count = 0;
      frontier.push({sy, sx});
      label[static_cast<std::size_t>(sy) * W + sx] = id;
      while (!frontier.empty()) {
        auto [y, x] = frontier.front();
        frontier.pop();
        ++count;
        auto& box = boxes[static_cast<std::size_t>(id)];
        box[0] = std::min(box[0], y);
        box[1] = std::max(box[1], y);
        box[2] = std::min(box[2], x);
        box[3] = std::max(box[3], x);
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ny = y + dy[d], nx = x + dx[d];
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          auto& l = label[static_cast<std::size_t>(ny) * W + nx];
          if (l >= 0 || !masked(ny, nx)) continue;
          l = id;
          frontier.push({ny, nx});
        }
      }
      if (count > best_count) {
        best_count = count;
        best_label = id;
      }
    }
  }
  const auto& box = boxes[static_cast<std::size_t>(best_label)];
  const int crop_h = box[1] - box[0] + 1, crop_w = box[3] - box[2] + 1;

  TensorF crop(1, crop_h, crop_w, image.channels());
  for (int y = 0; y < crop_h; ++y)
    crop.data.middleRows(static_cast<Eigen::Index>(y) * crop_w, crop_w) =
        image.data.middleRows(static_cast<Eigen::Index>(box[0] + y) * W + box[2], crop_w);
  if (crop_h == H && crop_w == W) return crop;
  return bilinear_resize(crop, H, W);
}

TensorF render_overlay(const TensorF& image, const Heatmap& heatmap) {
  TensorF heat(1, static_cast<int>(heatmap.values.rows()),
               static_cast<int>(heatmap.values.cols()), 1);
  for (int y = 0; y < heat.height; ++y)
    for (int x = 0; x < heat.width; ++x)
      heat.data(static_cast<Eigen::Index>(y) * heat.width + x, 0) = heatmap.values(y, x);
  TensorF up = bilinear_resize(heat, image.height, image.width);
  const float maxv = up.data.col(0).maxCoeff();
  if (maxv > 0.0f) up.data /= maxv;

  TensorF out(1, image.height, image.width, 3);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const float v = up.data(r, 0);
    // blue -> green -> red ramp
    const float red = std::clamp(2.0f * v - 1.0f, 0.0f, 1.0f);
    const float green = 1.0f - std::abs(2.0f * v - 1.0f);
    const float blue = std::clamp(1.0f - 2.0f * v, 0.0f, 1.0f);
    out.data(r, 0) = 0.5f * image.data(r, 0) + 0.5f * red;
    out.data(r, 1) = 0.5f * image.data(r, 1) + 0.5f * green;
    out.data(r, 2) = 0.5f * image.data(r, 2) + 0.5f * blue;
  }
  return out;
}

void save_cache_meta(const std::string& dir, const CropCacheMeta& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / "cache_meta.txt");
  if (!out) throw std::runtime_error("cannot write crop cache meta in " + dir);
  out << "format mlsm-crop-cache-v1\n";
  out << "classifier_hash " << meta.classifier_hash << "\n";
  out << "threshold " << meta.threshold << "\n";
  out << "image_size " << meta.image_size << "\n";
}

bool load_cache_meta(const std::string& dir, CropCacheMeta* meta) {
  std::ifstream in(std::filesystem::path(dir) / "cache_meta.txt");
  if (!in) return false;
  std::string key;
  while (in >> key) {
    if (key == "classifier_hash") in >> meta->classifier_hash;
    else if (key == "threshold") in >> meta->threshold;
    else if (key == "image_size") in >> meta->image_size;
    else std::getline(in, key);
  }
  return true;
}

}  // namespace mlsm
