#pragma once

#include "mlsm/dataset.hpp"
#include "mlsm/image.hpp"
#include "mlsm/model.hpp"

#include <filesystem>
#include <mutex>
#include <unordered_map>

namespace mlsm {

/// An episode before any image is decoded: entry indices plus local labels.
/// Support items are ordered class-major (all K shots of local class 0 first).
struct EpisodePlan {
  struct Item {
    int entry_index = 0;
    int label = 0;
  };
  std::vector<Item> support, query;
  int c_way = 0;
  int k_shot = 0;
};

/// Sample C classes and K+q_i images per class without replacement. Queries
/// are split as evenly as possible; remainder queries go to the lowest local
/// labels. Support and query images are disjoint by construction.
inline EpisodePlan plan_episode(const DatasetIndex& index, Split split, int c_way, int k_shot,
                                int n_query, Rng& rng) {
  require(c_way >= 1 && k_shot >= 1 && n_query >= 0, "plan_episode: non-positive sizes");
  std::vector<int> classes = index.classes_of(split);
  require(static_cast<int>(classes.size()) >= c_way,
          "plan_episode: split " + to_string(split) + " has " +
              std::to_string(classes.size()) + " classes, need " + std::to_string(c_way));

  // Partial Fisher-Yates: first c_way entries are the sampled classes.
  for (int i = 0; i < c_way; ++i) {
    const std::size_t j = i + rng.index(classes.size() - static_cast<std::size_t>(i));
    std::swap(classes[static_cast<std::size_t>(i)], classes[j]);
  }

  const auto by_class = index.entries_by_class();
  EpisodePlan plan;
  plan.c_way = c_way;
  plan.k_shot = k_shot;
  for (int local = 0; local < c_way; ++local) {
    const int cid = classes[static_cast<std::size_t>(local)];
    const int n_q = n_query / c_way + (local < n_query % c_way ? 1 : 0);
    std::vector<int> pool = by_class[static_cast<std::size_t>(cid)];
    require(static_cast<int>(pool.size()) >= k_shot + n_q,
            "plan_episode: class " + index.class_names[static_cast<std::size_t>(cid)] + " has " +
                std::to_string(pool.size()) + " images, need " + std::to_string(k_shot + n_q));
    rng.shuffle(pool);
    for (int k = 0; k < k_shot; ++k)
      plan.support.push_back({pool[static_cast<std::size_t>(k)], local});
    for (int q = 0; q < n_q; ++q)
      plan.query.push_back({pool[static_cast<std::size_t>(k_shot + q)], local});
  }
  return plan;
}

/// Decoded-image cache. Images come out resized to image_size and, when
/// normalization stats are set, standardized per channel.
class ImageStore {
 public:
  ImageStore(std::string root, int image_size, std::array<float, 3> mean = {0, 0, 0},
             std::array<float, 3> std = {1, 1, 1})
      : root_(std::move(root)), image_size_(image_size), mean_(mean), std_(std) {}

  static ImageStore for_index(const DatasetIndex& index, int image_size) {
    return ImageStore(index.root, image_size, index.norm_mean, index.norm_std);
  }

  int image_size() const { return image_size_; }
  const std::string& root() const { return root_; }

  TensorF get(const std::string& rel_path) const {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(rel_path);
      if (it != cache_.end()) return it->second;
    }
    TensorF img = load_image((std::filesystem::path(root_) / rel_path).string(), image_size_);
    for (int c = 0; c < 3; ++c)
      img.data.col(c) = (img.data.col(c).array() - mean_[static_cast<std::size_t>(c)]) /
                        std_[static_cast<std::size_t>(c)];
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(rel_path, std::move(img)).first->second;
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    cache_.clear();
  }

 private:
  std::string root_;
  int image_size_;
  std::array<float, 3> mean_, std_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, TensorF> cache_;
};

/// Object crops precomputed by the localizer, mirrored under cache_dir with a
/// ".ppm" suffix. Strict mode errors on a miss; lenient mode falls back to
/// the full image.
class CropSource {
 public:
  /// Crop files hold raw pixels; they are normalized with the same dataset
  /// stats as the images they were cut from.
  CropSource(std::string cache_dir, std::array<float, 3> mean, std::array<float, 3> std,
             const ImageStore* fallback, bool strict)
      : store_(std::move(cache_dir), fallback->image_size(), mean, std),
        fallback_(fallback),
        strict_(strict) {}

  static std::string crop_rel(const std::string& rel_path) { return rel_path + ".ppm"; }

  TensorF get(const std::string& rel_path) const {
    const std::filesystem::path p = std::filesystem::path(store_.root()) / crop_rel(rel_path);
    if (!std::filesystem::exists(p)) {
      if (strict_)
        throw std::runtime_error("crop cache miss for " + rel_path + " (looked at " + p.string() +
                                 "); run `mlsm localize` or enable lenient crops");
      return fallback_->get(rel_path);
    }
    return store_.get(crop_rel(rel_path));
  }

 private:
  ImageStore store_;
  const ImageStore* fallback_;
  bool strict_;
};

/// Fully materialized episode, mirroring the plan's ordering.
struct Episode {
  struct Item {
    std::string rel_path;
    TensorF image;
    int label = 0;
  };
  std::vector<Item> support, query;
  int c_way = 0;
  int k_shot = 0;
};

inline Episode materialize_episode(const DatasetIndex& index, const EpisodePlan& plan,
                                   const ImageStore& store) {
  Episode ep;
  ep.c_way = plan.c_way;
  ep.k_shot = plan.k_shot;
  for (const auto& it : plan.support) {
    const auto& rel = index.entries[static_cast<std::size_t>(it.entry_index)].rel_path;
    ep.support.push_back({rel, store.get(rel), it.label});
  }
  for (const auto& it : plan.query) {
    const auto& rel = index.entries[static_cast<std::size_t>(it.entry_index)].rel_path;
    ep.query.push_back({rel, store.get(rel), it.label});
  }
  return ep;
}

inline Episode sample_episode(const DatasetIndex& index, Split split, int c_way, int k_shot,
                              int n_query, Rng& rng, const ImageStore& store) {
  return materialize_episode(index, plan_episode(index, split, c_way, k_shot, n_query, rng), store);
}

/// Pack an episode into model tensors; crops only when the mode needs them.
template <class S>
EpisodeTensors<S> episode_tensors(const Episode& ep, const CropSource* crops) {
  EpisodeTensors<S> t;
  t.c_way = ep.c_way;
  t.k_shot = ep.k_shot;
  require(!ep.support.empty(), "episode_tensors: empty support set");
  const auto& first = ep.support.front().image;
  auto pack = [&](const std::vector<Episode::Item>& items, bool use_crops) {
    Tensor<S> out(static_cast<int>(items.size()), first.height, first.width, first.channels());
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
      const auto& item = items[static_cast<std::size_t>(i)];
      const TensorF& src = use_crops ? crops->get(item.rel_path) : item.image;
      require(src.height == first.height && src.width == first.width,
              "episode_tensors: image size mismatch for " + item.rel_path);
      out.image(i) = src.data.template cast<S>();
    }
    return out;
  };
  t.support_images = pack(ep.support, false);
  t.query_images = pack(ep.query, false);
  if (crops) {
    t.support_crops = pack(ep.support, true);
    t.query_crops = pack(ep.query, true);
  }
  for (const auto& it : ep.query) t.query_labels.push_back(it.label);
  return t;
}

}  // namespace mlsm
