#pragma once

#include "mlsm/checkpoint.hpp"
#include "mlsm/encoder.hpp"
#include "mlsm/episode.hpp"

#include <atomic>
#include <iostream>
#include <sstream>
#include <thread>

namespace mlsm {

/// Per-pixel class relevance at feature-map resolution; entries are
/// nonnegative by construction (ReLU of the weighted map sum).
struct Heatmap {
  MatF values;  // height x width, (y, x) indexing
  int source_class = -1;
};

/// Base-data classifier used solely to generate object-level areas: the same
/// four-block extractor, global average pooling, and one linear layer.
template <class S>
struct BaseClassifier {
  int image_size = 84;
  Encoder<S> encoder;
  nn::Linear<S> fc;
  std::vector<int> class_ids;            // dataset class id per logit index
  std::vector<std::string> class_names;  // class directory name per logit index
  std::array<float, 3> norm_mean{0, 0, 0}, norm_std{1, 1, 1};

  int num_classes() const { return fc.out_features(); }
  int channels() const { return encoder.channels(); }

  void init(Rng& rng, int in_channels, int channels_, int n_classes, int image_size_) {
    image_size = image_size_;
    encoder.init(rng, in_channels, channels_);
    fc.init(rng, channels_, n_classes);
  }

  void zero_like(const BaseClassifier& p) {
    image_size = p.image_size;
    encoder.zero_like(p.encoder);
    fc.zero_like(p.fc);
    class_ids = p.class_ids;
    class_names = p.class_names;
  }

  /// Logit index for a class directory name; -1 when unknown (novel class).
  int logit_of(const std::string& class_name) const {
    for (int i = 0; i < static_cast<int>(class_names.size()); ++i)
      if (class_names[static_cast<std::size_t>(i)] == class_name) return i;
    return -1;
  }

  void collect(std::vector<nn::ParamRef<S>>& refs, BaseClassifier& grad) {
    encoder.collect(refs, "clf.encoder", grad.encoder);
    register_param(refs, "clf.fc.weight", fc.weight, grad.fc.weight);
    register_param(refs, "clf.fc.bias", fc.bias, grad.fc.bias);
  }

  /// Final conv feature maps A^k (eval mode).
  Tensor<S> features(const Tensor<S>& images) const { return encode(encoder, images); }

  /// Class scores from feature maps; the same head the gradients flow through.
  Mat<S> logits_from_features(const Tensor<S>& feats) const {
    return nn::linear_forward(fc, gap(feats));
  }

  Mat<S> logits(const Tensor<S>& images) const {
    return logits_from_features(features(images));
  }

  std::string fingerprint() const {
    return "mlsm-clf-v1;scalar=" + std::string(sizeof(S) == 4 ? "f32" : "f64") +
           ";ch=" + std::to_string(channels()) + ";size=" + std::to_string(image_size) +
           ";classes=" + std::to_string(num_classes());
  }
};

/// Eq.-style CAM weights: alpha_k is the spatial mean of d(logit_c)/dA^k.
/// The gradient path is the classifier head run backward: logit -> GAP -> map.
template <class S>
Vec<S> cam_weights_from_features(const BaseClassifier<S>& clf, const Tensor<S>& feats,
                                 int class_index) {
  require(class_index >= 0 && class_index < clf.num_classes(),
          "cam_weights: class index out of range");
  require(feats.batch == 1, "cam_weights: one image at a time");
  // d(logit_c)/d(gap) is column c of the linear weight.
  Mat<S> d_gap = clf.fc.weight.col(class_index).transpose();
  Tensor<S> d_feats = nn::global_avg_pool_backward<S>(d_gap, feats.height, feats.width);
  Vec<S> alpha(feats.channels());
  for (int k = 0; k < feats.channels(); ++k) alpha(k) = d_feats.data.col(k).mean();
  return alpha;
}

template <class S>
Vec<S> cam_weights(const BaseClassifier<S>& clf, const Tensor<S>& image, int class_index) {
  return cam_weights_from_features(clf, clf.features(image), class_index);
}

template <class S>
Heatmap heatmap_from_features(const Tensor<S>& feats, const Vec<S>& alpha, int class_index) {
  Vec<S> weighted = feats.data * alpha;  // sum_k alpha_k * A^k, flattened
  Heatmap h;
  h.source_class = class_index;
  h.values.resize(feats.height, feats.width);
  for (int y = 0; y < feats.height; ++y)
    for (int x = 0; x < feats.width; ++x)
      h.values(y, x) = std::max(0.0f, static_cast<float>(weighted(y * feats.width + x)));
  return h;
}

template <class S>
Heatmap gradcam(const BaseClassifier<S>& clf, const Tensor<S>& image, int class_index) {
  Tensor<S> feats = clf.features(image);
  return heatmap_from_features(feats, cam_weights_from_features(clf, feats, class_index),
                               class_index);
}

/// Closest base class for an image of unknown label: argmax over the base
/// logits, ties broken toward the lowest index.
template <class S>
int pick_class_for_novel(const BaseClassifier<S>& clf, const Tensor<S>& image) {
  Mat<S> l = clf.logits(image);
  int best = 0;
  for (int j = 1; j < clf.num_classes(); ++j)
    if (l(0, j) > l(0, best)) best = j;
  return best;
}

/// Threshold the upsampled heatmap at threshold_frac * max, take the largest
/// 4-connected component's bounding box, crop and rescale to the input size.
/// An all-zero heatmap returns the image unchanged.
TensorF extract_region(const TensorF& image, const Heatmap& heatmap, float threshold_frac);

// ---------------------------------------------------------------------------
// Base-classifier training (cross-entropy over base classes, Adam).
// ---------------------------------------------------------------------------

struct LocalizerTrainConfig {
  int steps = 2000;
  int batch_size = 32;
  double lr = 1e-3;
  int channels = 64;
  int image_size = 84;
  std::uint64_t seed = 0;
  long log_every = 0;  // 0: quiet
};

template <class S>
struct LocalizerTrainResult {
  BaseClassifier<S> classifier;
  double final_loss = 0;
};

template <class S>
LocalizerTrainResult<S> train_base_classifier(const DatasetIndex& index, const ImageStore& store,
                                              const LocalizerTrainConfig& cfg,
                                              std::ostream* log = nullptr) {
  std::vector<int> base_classes = index.classes_of(Split::Base);
  require(!base_classes.empty(), "train_base_classifier: base split is empty");
  std::vector<int> class_rank(static_cast<std::size_t>(index.num_classes()), -1);
  for (int i = 0; i < static_cast<int>(base_classes.size()); ++i)
    class_rank[static_cast<std::size_t>(base_classes[static_cast<std::size_t>(i)])] = i;

  std::vector<int> pool;  // entry indices of base images
  for (int i = 0; i < static_cast<int>(index.entries.size()); ++i)
    if (class_rank[static_cast<std::size_t>(index.entries[static_cast<std::size_t>(i)].class_id)] >= 0)
      pool.push_back(i);

  LocalizerTrainResult<S> result;
  BaseClassifier<S>& clf = result.classifier;
  {
    Rng rng(derive_seed(cfg.seed, "clf-init", 0));
    clf.init(rng, 3, cfg.channels, static_cast<int>(base_classes.size()), cfg.image_size);
    clf.class_ids = base_classes;
    for (int cid : base_classes)
      clf.class_names.push_back(index.class_names[static_cast<std::size_t>(cid)]);
    clf.norm_mean = index.norm_mean;
    clf.norm_std = index.norm_std;
  }
  BaseClassifier<S> grads;
  grads.zero_like(clf);
  std::vector<nn::ParamRef<S>> refs;
  clf.collect(refs, grads);
  nn::Adam<S> adam;
  adam.reset(refs);

  double loss = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(derive_seed(cfg.seed, "clf-batch", static_cast<std::uint64_t>(step)));
    const int bs = std::min<int>(cfg.batch_size, static_cast<int>(pool.size()));
    Tensor<S> batch(bs, cfg.image_size, cfg.image_size, 3);
    std::vector<int> labels(static_cast<std::size_t>(bs));
    for (int b = 0; b < bs; ++b) {
      const auto& e = index.entries[static_cast<std::size_t>(pool[rng.index(pool.size())])];
      batch.image(b) = store.get(e.rel_path).data.template cast<S>();
      labels[static_cast<std::size_t>(b)] = class_rank[static_cast<std::size_t>(e.class_id)];
    }

    nn::zero_grads(refs);
    EncoderCache<S> enc_cache;
    Tensor<S> feats = encode(clf.encoder, batch, /*training=*/true, &enc_cache);
    Mat<S> pooled = gap(feats);
    Mat<S> logits = nn::linear_forward(clf.fc, pooled);
    Mat<S> d_logits;
    loss = static_cast<double>(nn::softmax_cross_entropy(logits, labels, &d_logits));
    if (!std::isfinite(loss))
      throw std::runtime_error("base classifier training diverged at step " +
                               std::to_string(step) + " (loss is not finite)");
    Mat<S> d_pooled = nn::linear_backward(clf.fc, pooled, d_logits, grads.fc);
    Tensor<S> d_feats = nn::global_avg_pool_backward<S>(d_pooled, feats.height, feats.width);
    encode_backward(clf.encoder, enc_cache, d_feats, grads.encoder);
    adam.step(refs, cfg.lr);
    if (log && cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      *log << "localizer step " << (step + 1) << "/" << cfg.steps << " loss " << loss << "\n";
  }
  result.final_loss = loss;
  return result;
}

/// Top-1 accuracy of the classifier over a split (base-class images only).
template <class S>
double classifier_accuracy(const BaseClassifier<S>& clf, const DatasetIndex& index,
                           const ImageStore& store, Split split, std::size_t limit = 0) {
  std::vector<int> class_rank(static_cast<std::size_t>(index.num_classes()), -1);
  for (int i = 0; i < static_cast<int>(clf.class_ids.size()); ++i)
    class_rank[static_cast<std::size_t>(clf.class_ids[static_cast<std::size_t>(i)])] = i;
  std::size_t n = 0, correct = 0;
  for (const auto& e : index.entries) {
    if (index.class_split[static_cast<std::size_t>(e.class_id)] != split) continue;
    const int rank = class_rank[static_cast<std::size_t>(e.class_id)];
    if (rank < 0) continue;
    Tensor<S> img(1, store.image_size(), store.image_size(), 3);
    img.image(0) = store.get(e.rel_path).data.template cast<S>();
    Mat<S> l = clf.logits(img);
    int best = 0;
    for (int j = 1; j < clf.num_classes(); ++j)
      if (l(0, j) > l(0, best)) best = j;
    correct += best == rank ? 1u : 0u;
    if (++n == limit) break;
  }
  return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Classifier checkpoints and the crop cache.
// ---------------------------------------------------------------------------

template <class S>
void save_classifier(const std::string& dir, BaseClassifier<S>& clf) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  BaseClassifier<S> grads;
  grads.zero_like(clf);
  std::vector<nn::ParamRef<S>> refs;
  clf.collect(refs, grads);
  save_params(fs::path(dir) / "params.bin", clf.fingerprint(), refs);
  std::ofstream meta(fs::path(dir) / "meta.txt");
  meta << "format mlsm-classifier-v1\n";
  meta << "fingerprint " << clf.fingerprint() << "\n";
  meta << "image_size " << clf.image_size << "\n";
  meta << "channels " << clf.channels() << "\n";
  meta << "num_classes " << clf.num_classes() << "\n";
  meta << "class_ids";
  for (int c : clf.class_ids) meta << " " << c;
  meta << "\n";
  meta << "class_names";
  for (const auto& n : clf.class_names) meta << " " << n;
  meta << "\n";
  meta << "norm_mean " << clf.norm_mean[0] << " " << clf.norm_mean[1] << " " << clf.norm_mean[2]
       << "\n";
  meta << "norm_std " << clf.norm_std[0] << " " << clf.norm_std[1] << " " << clf.norm_std[2]
       << "\n";
  meta << "params_hash " << nn::params_hash(refs) << "\n";
}

template <class S>
BaseClassifier<S> load_classifier(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream meta(fs::path(dir) / "meta.txt");
  if (!meta) throw std::runtime_error("cannot open classifier checkpoint: " + dir);
  int image_size = 0, channels = 0, num_classes = 0;
  std::vector<int> class_ids;
  std::vector<std::string> class_names;
  std::array<float, 3> norm_mean{0, 0, 0}, norm_std{1, 1, 1};
  std::string key;
  while (meta >> key) {
    if (key == "image_size") meta >> image_size;
    else if (key == "channels") meta >> channels;
    else if (key == "num_classes") meta >> num_classes;
    else if (key == "class_ids") {
      int v;
      while (meta.peek() != '\n' && meta >> v) class_ids.push_back(v);
    } else if (key == "class_names") {
      std::string line;
      std::getline(meta, line);
      std::istringstream ls(line);
      std::string name;
      while (ls >> name) class_names.push_back(name);
    } else if (key == "norm_mean") {
      meta >> norm_mean[0] >> norm_mean[1] >> norm_mean[2];
    } else if (key == "norm_std") {
      meta >> norm_std[0] >> norm_std[1] >> norm_std[2];
    } else std::getline(meta, key);
  }
  require(image_size > 0 && channels > 0 && num_classes > 0,
          "classifier checkpoint meta is incomplete in " + dir);
  require(static_cast<int>(class_ids.size()) == num_classes,
          "classifier checkpoint class list does not match num_classes in " + dir);
  BaseClassifier<S> clf;
  Rng rng(0);
  clf.init(rng, 3, channels, num_classes, image_size);
  clf.class_ids = class_ids;
  clf.class_names = class_names;
  clf.norm_mean = norm_mean;
  clf.norm_std = norm_std;
  BaseClassifier<S> grads;
  grads.zero_like(clf);
  std::vector<nn::ParamRef<S>> refs;
  clf.collect(refs, grads);
  load_params((fs::path(dir) / "params.bin").string(), clf.fingerprint(), refs);
  return clf;
}

template <class S>
std::uint64_t classifier_hash(BaseClassifier<S>& clf) {
  BaseClassifier<S> grads;
  grads.zero_like(clf);
  std::vector<nn::ParamRef<S>> refs;
  clf.collect(refs, grads);
  return nn::params_hash(refs);
}

struct LocalizeOptions {
  float threshold = 0.2f;
  bool overlay = false;
  int workers = 1;
  bool force = false;
};

/// Render a heatmap-over-image composite (simple blue-to-red ramp).
TensorF render_overlay(const TensorF& image, const Heatmap& heatmap);

/// Metadata identifying a crop cache: classifier hash + threshold + size.
struct CropCacheMeta {
  std::uint64_t classifier_hash = 0;
  float threshold = 0;
  int image_size = 0;
};

void save_cache_meta(const std::string& dir, const CropCacheMeta& meta);
bool load_cache_meta(const std::string& dir, CropCacheMeta* meta);

/// Precompute object crops for every image under `rel_paths`. Images of base
/// classes use their own logit; everything else falls back to the closest
/// class (argmax). Existing files for the same cache key are kept.
template <class S>
int build_crop_cache(BaseClassifier<S>& clf, const std::vector<std::string>& rel_paths,
                     const std::vector<int>& logit_index,  // -1: unknown class
                     const std::string& images_root, const std::string& out_dir,
                     const std::array<float, 3>& norm_mean, const std::array<float, 3>& norm_std,
                     const LocalizeOptions& opts, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  require(rel_paths.size() == logit_index.size(), "build_crop_cache: label list mismatch");
  CropCacheMeta meta{classifier_hash(clf), opts.threshold, clf.image_size};
  CropCacheMeta existing;
  if (load_cache_meta(out_dir, &existing)) {
    const bool same = existing.classifier_hash == meta.classifier_hash &&
                      existing.threshold == meta.threshold && existing.image_size == meta.image_size;
    if (!same && !opts.force)
      throw std::runtime_error(
          "crop cache at " + out_dir +
          " was built with a different classifier/threshold; pass --force to rebuild");
  }
  fs::create_directories(out_dir);
  save_cache_meta(out_dir, meta);

  std::atomic<int> next{0}, done{0};
  const int n = static_cast<int>(rel_paths.size());
  auto worker = [&]() {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      const std::string& rel = rel_paths[static_cast<std::size_t>(i)];
      const fs::path out_path = fs::path(out_dir) / CropSource::crop_rel(rel);
      if (fs::exists(out_path)) continue;
      TensorF pixels = load_image((fs::path(images_root) / rel).string(), clf.image_size);
      Tensor<S> input(1, clf.image_size, clf.image_size, 3);
      for (int c = 0; c < 3; ++c)
        input.data.col(c) = ((pixels.data.col(c).array() - norm_mean[static_cast<std::size_t>(c)]) /
                             norm_std[static_cast<std::size_t>(c)])
                                .template cast<S>();
      int cls = logit_index[static_cast<std::size_t>(i)];
      if (cls < 0) cls = pick_class_for_novel(clf, input);
      Heatmap heat = gradcam(clf, input, cls);
      TensorF crop = extract_region(pixels, heat, opts.threshold);
      fs::create_directories(out_path.parent_path());
      const std::string tmp = out_path.string() + ".tmp";
      save_ppm(tmp, crop);
      fs::rename(tmp, out_path);
      if (opts.overlay) {
        const fs::path ov_path = fs::path(out_dir) / "overlays" / (rel + ".ppm");
        fs::create_directories(ov_path.parent_path());
        save_ppm(ov_path.string(), render_overlay(pixels, heat));
      }
      ++done;
    }
  };
  const int n_workers = std::max(1, opts.workers);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (log) *log << "localized " << done.load() << " images into " << out_dir << "\n";
  return done.load();
}

}  // namespace mlsm
