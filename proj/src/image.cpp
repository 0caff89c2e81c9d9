#include "mlsm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#ifdef MLSM_HAVE_JPEG
#include <jpeglib.h>
#endif

namespace mlsm {

namespace {

TensorF from_interleaved_u8(const std::vector<unsigned char>& px, int h, int w, int comps) {
  TensorF img(1, h, w, 3);
  const float inv = 1.0f / 255.0f;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const unsigned char* p = &px[(static_cast<std::size_t>(y) * w + x) * comps];
      Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
      if (comps == 1) {
        float v = p[0] * inv;
        img.data(row, 0) = v;
        img.data(row, 1) = v;
        img.data(row, 2) = v;
      } else {
        img.data(row, 0) = p[0] * inv;
        img.data(row, 1) = p[1] * inv;
        img.data(row, 2) = p[2] * inv;
      }
    }
  }
  return img;
}

int read_pnm_token(std::istream& in, const std::string& path) {
  // Whitespace-separated ASCII integer, '#' starts a comment to end of line.
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c))
    throw std::runtime_error("malformed PNM header: " + path);
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return static_cast<int>(v);
}

TensorF decode_pnm(std::ifstream& in, const std::string& path) {
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw std::runtime_error("unsupported PNM magic in " + path);
  const int comps = magic[1] == '6' ? 3 : 1;
  int w = read_pnm_token(in, path);
  int h = read_pnm_token(in, path);
  int maxval = read_pnm_token(in, path);
  if (maxval <= 0 || maxval > 255)
    throw std::runtime_error("unsupported PNM maxval in " + path);
  if (w <= 0 || h <= 0) throw std::runtime_error("zero-area image: " + path);
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * comps);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size()))
    throw std::runtime_error("truncated PNM payload: " + path);
  if (maxval != 255)
    for (auto& b : px)
      b = static_cast<unsigned char>(b * 255 / maxval);
  return from_interleaved_u8(px, h, w, comps);
}

#ifdef MLSM_HAVE_JPEG
struct JpegErrorTrap {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* trap = reinterpret_cast<JpegErrorTrap*>(cinfo->err);
  std::longjmp(trap->jump, 1);
}

TensorF decode_jpeg(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open image: " + path);

  jpeg_decompress_struct cinfo;
  JpegErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = jpeg_error_exit;
  if (setjmp(trap.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw std::runtime_error("JPEG decode failed: " + path);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);

  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  const int comps = cinfo.output_components;
  if (w <= 0 || h <= 0) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw std::runtime_error("zero-area image: " + path);
  }
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * comps);
  while (cinfo.output_scanline < cinfo.output_height) {
    unsigned char* row = &px[static_cast<std::size_t>(cinfo.output_scanline) * w * comps];
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return from_interleaved_u8(px, h, w, comps);
}
#endif

}  // namespace

TensorF decode_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  unsigned char magic[2] = {0, 0};
  in.read(reinterpret_cast<char*>(magic), 2);
  if (in.gcount() != 2) throw std::runtime_error("not an image file: " + path);
  in.seekg(0);
  if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) return decode_pnm(in, path);
  if (magic[0] == 0xFF && magic[1] == 0xD8) {
#ifdef MLSM_HAVE_JPEG
    in.close();
    return decode_jpeg(path);
#else
    throw std::runtime_error("JPEG support not built in, cannot decode: " + path);
#endif
  }
  throw std::runtime_error("unrecognized image format: " + path);
}

TensorF bilinear_resize(const TensorF& img, int out_h, int out_w) {
  require(img.batch == 1, "bilinear_resize expects a single image");
  require(out_h > 0 && out_w > 0, "bilinear_resize: non-positive output size");
  const int in_h = img.height, in_w = img.width, ch = img.channels();
  TensorF out(1, out_h, out_w, ch);
  const float sy = static_cast<float>(in_h) / out_h;
  const float sx = static_cast<float>(in_w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    float fy = (y + 0.5f) * sy - 0.5f;
    fy = std::clamp(fy, 0.0f, static_cast<float>(in_h - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, in_h - 1);
    float wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      float fx = (x + 0.5f) * sx - 0.5f;
      fx = std::clamp(fx, 0.0f, static_cast<float>(in_w - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, in_w - 1);
      float wx = fx - x0;
      Eigen::Index r00 = static_cast<Eigen::Index>(y0) * in_w + x0;
      Eigen::Index r01 = static_cast<Eigen::Index>(y0) * in_w + x1;
      Eigen::Index r10 = static_cast<Eigen::Index>(y1) * in_w + x0;
      Eigen::Index r11 = static_cast<Eigen::Index>(y1) * in_w + x1;
      Eigen::Index ro = static_cast<Eigen::Index>(y) * out_w + x;
      for (int c = 0; c < ch; ++c) {
        float top = img.data(r00, c) * (1.0f - wx) + img.data(r01, c) * wx;
        float bot = img.data(r10, c) * (1.0f - wx) + img.data(r11, c) * wx;
        out.data(ro, c) = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  return out;
}

TensorF load_image(const std::string& path, int target_size) {
  TensorF img = decode_image_file(path);
  if (img.height == target_size && img.width == target_size) return img;
  return bilinear_resize(img, target_size, target_size);
}

void save_ppm(const std::string& path, const TensorF& img) {
  require(img.batch == 1 && img.channels() == 3, "save_ppm expects one RGB image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      Eigen::Index r = static_cast<Eigen::Index>(y) * img.width + x;
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.data(r, c), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace mlsm
