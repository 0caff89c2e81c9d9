#pragma once

#include "mlsm/encoder.hpp"
#include "mlsm/relation.hpp"

#include <sstream>

namespace mlsm {

/// Ablation rows: image level only, image+global, image+global+object.
enum class Ablation { I, IG, IGO };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::I: return "I";
    case Ablation::IG: return "I+G";
    default: return "I+G+O";
  }
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "I" || s == "i") return Ablation::I;
  if (s == "I+G" || s == "i+g" || s == "IG") return Ablation::IG;
  if (s == "I+G+O" || s == "i+g+o" || s == "IGO") return Ablation::IGO;
  throw std::runtime_error("unknown ablation mode: " + s + " (expected I, I+G or I+G+O)");
}

inline std::string to_string(LossKind k) { return k == LossKind::MSE ? "mse" : "bce"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::MSE;
  if (s == "bce") return LossKind::BCE;
  throw std::runtime_error("unknown loss kind: " + s + " (expected mse or bce)");
}

struct ModelConfig {
  int in_channels = 3;
  int channels = 64;     // filters per conv block
  int dim = 64;          // common fused dimension D
  int head_hidden = 8;   // hidden width of the similarity head
  int image_size = 84;
  Ablation ablation = Ablation::IGO;
  LossKind loss = LossKind::MSE;
  std::string scalar_name = "f32";

  int map_side() const { return encoder_map_side(image_size); }

  /// Architecture fingerprint; checkpoints refuse to load across mismatches.
  std::string fingerprint() const {
    std::ostringstream s;
    s << "mlsm-v1;scalar=" << scalar_name << ";in=" << in_channels << ";ch=" << channels
      << ";D=" << dim << ";H=" << head_hidden << ";size=" << image_size
      << ";pool=1,2;adjpool=1,2;bn=batch/running;mode=" << to_string(ablation)
      << ";loss=" << to_string(loss);
    return s.str();
  }
};

/// Reconstruct the architecture from a checkpoint fingerprint, so evaluation
/// never has to guess (and cannot mismatch) the stored model.
inline ModelConfig parse_fingerprint(const std::string& fp) {
  ModelConfig cfg;
  std::istringstream in(fp);
  std::string field;
  bool versioned = false;
  while (std::getline(in, field, ';')) {
    if (field == "mlsm-v1") {
      versioned = true;
      continue;
    }
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "scalar") cfg.scalar_name = value;
    else if (key == "in") cfg.in_channels = std::stoi(value);
    else if (key == "ch") cfg.channels = std::stoi(value);
    else if (key == "D") cfg.dim = std::stoi(value);
    else if (key == "H") cfg.head_hidden = std::stoi(value);
    else if (key == "size") cfg.image_size = std::stoi(value);
    else if (key == "mode") cfg.ablation = parse_ablation(value);
    else if (key == "loss") cfg.loss = parse_loss(value);
  }
  require(versioned, "unrecognized model fingerprint: " + fp);
  require(cfg.fingerprint() == fp, "model fingerprint has unsupported fields: " + fp);
  return cfg;
}

template <class S>
struct MlsmParams {
  Encoder<S> encoder;
  Adjuster<S> adj_image;      // image-level A
  Adjuster<S> adj_object;     // object-level A (I+G+O only)
  nn::Linear<S> adj_global;    // global-level A: vector input, FC only
  Adjuster<S> pair_relation;   // I-only pathway: relation module on 2C-channel concat maps
  SimilarityHead<S> head;

  void init(const ModelConfig& cfg, Rng& rng) {
    encoder.init(rng, cfg.in_channels, cfg.channels);
    const int side = cfg.map_side();
    if (cfg.ablation == Ablation::I) {
      pair_relation.init(rng, 2 * cfg.channels, cfg.channels, side, cfg.dim);
      head.init(rng, cfg.dim, cfg.head_hidden);
    } else {
      adj_image.init(rng, cfg.channels, cfg.channels, side, cfg.dim);
      if (cfg.ablation == Ablation::IGO)
        adj_object.init(rng, cfg.channels, cfg.channels, side, cfg.dim);
      adj_global.init(rng, cfg.channels, cfg.dim);
      head.init(rng, 2 * cfg.dim, cfg.head_hidden);
    }
  }

  void zero_like(const MlsmParams& p, const ModelConfig& cfg) {
    encoder.zero_like(p.encoder);
    head.zero_like(p.head);
    if (cfg.ablation == Ablation::I) {
      pair_relation.zero_like(p.pair_relation);
    } else {
      adj_image.zero_like(p.adj_image);
      if (cfg.ablation == Ablation::IGO) adj_object.zero_like(p.adj_object);
      adj_global.zero_like(p.adj_global);
    }
  }

  void collect(const ModelConfig& cfg, std::vector<nn::ParamRef<S>>& refs, MlsmParams& grad) {
    encoder.collect(refs, "encoder", grad.encoder);
    if (cfg.ablation == Ablation::I) {
      pair_relation.collect(refs, "pair_relation", grad.pair_relation);
    } else {
      adj_image.collect(refs, "adj_image", grad.adj_image);
      if (cfg.ablation == Ablation::IGO) adj_object.collect(refs, "adj_object", grad.adj_object);
      register_param(refs, "adj_global.fc.weight", adj_global.weight, grad.adj_global.weight);
      register_param(refs, "adj_global.fc.bias", adj_global.bias, grad.adj_global.bias);
    }
    head.collect(refs, "head", grad.head);
  }
};

/// One sampled episode, materialized as tensors. Support rows are ordered
/// class-major: rows [c*k_shot, (c+1)*k_shot) belong to local class c.
template <class S>
struct EpisodeTensors {
  Tensor<S> support_images, query_images;
  Tensor<S> support_crops, query_crops;  // unused in I and I+G modes
  std::vector<int> query_labels;
  int c_way = 0;
  int k_shot = 0;

  int n_support() const { return support_images.batch; }
  int n_query() const { return query_images.batch; }
};

/// Forward intermediates; layer caches are only populated in training mode.
template <class S>
struct EpisodeForward {
  EncoderCache<S> enc;
  AdjusterCache<S> adj_image, adj_object, pair_relation;
  HeadCache<S> head;
  Mat<S> g_vec;       // gap(I) rows
  Mat<S> fused;       // (n_s + n_q) x D
  Tensor<S> i_maps;   // image-level maps, supports then queries
  Tensor<S> o_maps;   // object-level maps (I+G+O)
  Tensor<S> rep_maps;  // per-class mean support maps (I mode)
  Mat<S> scores;      // n_query x c_way
};

template <class S>
class MlsmModel {
 public:
  ModelConfig cfg;
  MlsmParams<S> params;

  MlsmModel() = default;
  explicit MlsmModel(const ModelConfig& c, std::uint64_t seed) : cfg(c) {
    Rng rng(derive_seed(seed, "model-init", 0));
    params.init(cfg, rng);
    rebuild_refs();
  }

  std::vector<nn::ParamRef<S>>& param_refs() {
    if (refs_.empty()) rebuild_refs();
    return refs_;
  }

  void rebuild_refs() {
    refs_.clear();
    grads_.zero_like(params, cfg);
    params.collect(cfg, refs_, grads_);
  }

  std::uint64_t params_hash() { return nn::params_hash(param_refs()); }

  /// Episode score matrix: entry (q, c) is the relation score between class
  /// c's representation and query q. Training mode uses batch-norm batch
  /// statistics over the episode's combined forward pass and fills caches.
  Mat<S> score_episode(const EpisodeTensors<S>& ep, bool training, EpisodeForward<S>* fwd) {
    EpisodeForward<S> local;
    EpisodeForward<S>& f = fwd ? *fwd : local;
    const int n_s = ep.n_support(), n_q = ep.n_query();
    require(n_s == ep.c_way * ep.k_shot, "score_episode: support size != C*K");
    const bool want_cache = training && fwd != nullptr;

    if (cfg.ablation == Ablation::I) {
      Tensor<S> maps = encode(params.encoder, concat_batch(ep.support_images, ep.query_images),
                              training, want_cache ? &f.enc : nullptr);
      f.i_maps = std::move(maps);
      // K-shot class representations live at map level in this pathway.
      f.rep_maps = Tensor<S>(ep.c_way, f.i_maps.height, f.i_maps.width, f.i_maps.channels());
      for (int c = 0; c < ep.c_way; ++c) {
        for (int k = 0; k < ep.k_shot; ++k) f.rep_maps.image(c) += f.i_maps.image(c * ep.k_shot + k);
        f.rep_maps.image(c) /= static_cast<S>(ep.k_shot);
      }
      // Pairwise depth concatenation, class representation channels first.
      Tensor<S> pairs(n_q * ep.c_way, f.i_maps.height, f.i_maps.width, 2 * f.i_maps.channels());
      for (int q = 0; q < n_q; ++q) {
        for (int c = 0; c < ep.c_way; ++c) {
          auto block = pairs.image(q * ep.c_way + c);
          block.leftCols(f.i_maps.channels()) = f.rep_maps.image(c);
          block.rightCols(f.i_maps.channels()) = f.i_maps.image(n_s + q);
        }
      }
      Mat<S> rel = adjust(params.pair_relation, pairs, training,
                          want_cache ? &f.pair_relation : nullptr);
      Vec<S> flat = head_forward(params.head, rel, want_cache ? &f.head : nullptr);
      f.scores = Eigen::Map<Mat<S>>(flat.data(), ep.c_way, n_q).transpose();
      return f.scores;
    }

    // Fused pathways (I+G, I+G+O). One combined encoder batch: support
    // images, query images, then the object crops in the same order.
    Tensor<S> enc_in = concat_batch(ep.support_images, ep.query_images);
    const bool with_object = cfg.ablation == Ablation::IGO;
    if (with_object) {
      require(ep.support_crops.batch == n_s && ep.query_crops.batch == n_q,
              "score_episode: object crops missing for I+G+O");
      enc_in = concat_batch(enc_in, concat_batch(ep.support_crops, ep.query_crops));
    }
    Tensor<S> maps = encode(params.encoder, enc_in, training, want_cache ? &f.enc : nullptr);
    f.i_maps = slice_batch(maps, 0, n_s + n_q);
    f.g_vec = gap(f.i_maps);
    Mat<S> fused = adjust(params.adj_image, f.i_maps, training, want_cache ? &f.adj_image : nullptr);
    fused += nn::linear_forward(params.adj_global, f.g_vec);
    if (with_object) {
      f.o_maps = slice_batch(maps, n_s + n_q, n_s + n_q);
      fused += adjust(params.adj_object, f.o_maps, training, want_cache ? &f.adj_object : nullptr);
    }
    f.fused = std::move(fused);

    Mat<S> reps(ep.c_way, cfg.dim);
    for (int c = 0; c < ep.c_way; ++c)
      reps.row(c) = f.fused.middleRows(c * ep.k_shot, ep.k_shot).colwise().mean();

    Mat<S> pair_in(n_q * ep.c_way, 2 * cfg.dim);
    for (int q = 0; q < n_q; ++q) {
      for (int c = 0; c < ep.c_way; ++c) {
        pair_in.row(q * ep.c_way + c).head(cfg.dim) = reps.row(c);
        pair_in.row(q * ep.c_way + c).tail(cfg.dim) = f.fused.row(n_s + q);
      }
    }
    Vec<S> flat = head_forward(params.head, pair_in, want_cache ? &f.head : nullptr);
    f.scores = Eigen::Map<Mat<S>>(flat.data(), ep.c_way, n_q).transpose();
    return f.scores;
  }

  Mat<S> score_episode(const EpisodeTensors<S>& ep) {
    return score_episode(ep, /*training=*/false, nullptr);
  }

  /// One episodic training step: forward, loss, backward, Adam update.
  S train_step(const EpisodeTensors<S>& ep, nn::Adam<S>& adam, double lr) {
    auto& refs = param_refs();
    nn::zero_grads(refs);
    EpisodeForward<S> f;
    Mat<S> scores = score_episode(ep, /*training=*/true, &f);
    const S loss = episode_loss(scores, ep.query_labels, cfg.loss);
    backward(ep, f);
    adam.step(refs, lr);
    return loss;
  }

  /// Loss for given scores under the configured loss kind.
  S loss_of(const Mat<S>& scores, const std::vector<int>& labels) const {
    return episode_loss(scores, labels, cfg.loss);
  }

 private:
  void backward(const EpisodeTensors<S>& ep, EpisodeForward<S>& f) {
    const int n_s = ep.n_support(), n_q = ep.n_query();
    Vec<S> dz_flat(n_q * ep.c_way);
    {
      Vec<S> dz = episode_loss_grad_z(f.scores, ep.query_labels, cfg.loss);
      // episode_loss_grad_z is row-major (q, c); head rows are q*C + c as well.
      dz_flat = dz;
    }
    Mat<S> d_pairs = head_backward(params.head, f.head, dz_flat, grads_.head);

    if (cfg.ablation == Ablation::I) {
      Tensor<S> d_pair_maps =
          adjust_backward(params.pair_relation, f.pair_relation, d_pairs, grads_.pair_relation);
      const int ch = f.i_maps.channels();
      Tensor<S> d_maps(n_s + n_q, f.i_maps.height, f.i_maps.width, ch);
      Tensor<S> d_rep(ep.c_way, f.i_maps.height, f.i_maps.width, ch);
      for (int q = 0; q < n_q; ++q) {
        for (int c = 0; c < ep.c_way; ++c) {
          auto block = d_pair_maps.image(q * ep.c_way + c);
          d_rep.image(c) += block.leftCols(ch);
          d_maps.image(n_s + q) += block.rightCols(ch);
        }
      }
      for (int c = 0; c < ep.c_way; ++c)
        for (int k = 0; k < ep.k_shot; ++k)
          d_maps.image(c * ep.k_shot + k) = d_rep.image(c) / static_cast<S>(ep.k_shot);
      encode_backward(params.encoder, f.enc, d_maps, grads_.encoder);
      return;
    }

    // Fused pathways: d_pairs rows are [d_rep_c, d_fused_query].
    Mat<S> d_reps = Mat<S>::Zero(ep.c_way, cfg.dim);
    Mat<S> d_fused = Mat<S>::Zero(n_s + n_q, cfg.dim);
    for (int q = 0; q < n_q; ++q) {
      for (int c = 0; c < ep.c_way; ++c) {
        d_reps.row(c) += d_pairs.row(q * ep.c_way + c).head(cfg.dim);
        d_fused.row(n_s + q) += d_pairs.row(q * ep.c_way + c).tail(cfg.dim);
      }
    }
    for (int c = 0; c < ep.c_way; ++c)
      for (int k = 0; k < ep.k_shot; ++k)
        d_fused.row(c * ep.k_shot + k) = d_reps.row(c) / static_cast<S>(ep.k_shot);

    // Three branches share d_fused; G feeds back into I through the pooling.
    Tensor<S> d_i_maps = adjust_backward(params.adj_image, f.adj_image, d_fused, grads_.adj_image);
    Mat<S> d_g = nn::linear_backward(params.adj_global, f.g_vec, d_fused, grads_.adj_global);
    d_i_maps.data += nn::global_avg_pool_backward<S>(d_g, f.i_maps.height, f.i_maps.width).data;

    Tensor<S> d_enc_out = d_i_maps;
    if (cfg.ablation == Ablation::IGO) {
      Tensor<S> d_o_maps =
          adjust_backward(params.adj_object, f.adj_object, d_fused, grads_.adj_object);
      d_enc_out = concat_batch(d_i_maps, d_o_maps);
    }
    encode_backward(params.encoder, f.enc, d_enc_out, grads_.encoder);
  }

  MlsmParams<S> grads_;
  std::vector<nn::ParamRef<S>> refs_;
};

}  // namespace mlsm
