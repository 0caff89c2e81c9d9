#pragma once

#include "mlsm/nn.hpp"

#include <array>

namespace mlsm {

/// Output spatial side of the feature extractor for a given input side:
/// convolutions preserve size, 2x2 max-pools after blocks 1 and 2 halve it.
inline int encoder_map_side(int input_side) { return (input_side / 2) / 2; }

/// Feature extractor F: four 3x3 conv blocks (batch norm + ReLU), 2x2
/// max-pool after blocks 1 and 2.
template <class S>
struct Encoder {
  std::array<nn::ConvBlock<S>, 4> blocks;

  void init(Rng& rng, int in_channels, int channels) {
    blocks[0].init(rng, in_channels, channels);
    for (int i = 1; i < 4; ++i) blocks[i].init(rng, channels, channels);
  }

  void zero_like(const Encoder& p) {
    for (int i = 0; i < 4; ++i) blocks[i].zero_like(p.blocks[i]);
  }

  void collect(std::vector<nn::ParamRef<S>>& refs, const std::string& prefix, Encoder& grad) {
    for (int i = 0; i < 4; ++i)
      blocks[i].collect(refs, prefix + ".block" + std::to_string(i + 1), grad.blocks[i]);
  }

  int channels() const { return blocks[0].conv.out_channels(); }
};

template <class S>
struct EncoderCache {
  std::array<nn::ConvBlockCache<S>, 4> block;
  nn::PoolCache pool1, pool2;
};

template <class S>
Tensor<S> encode(Encoder<S>& enc, const Tensor<S>& images, bool training,
                 std::type_identity_t<EncoderCache<S>*> cache) {
  Tensor<S> h = nn::block_forward(enc.blocks[0], images, training, cache ? &cache->block[0] : nullptr);
  h = nn::maxpool2_forward(h, cache ? &cache->pool1 : nullptr);
  h = nn::block_forward(enc.blocks[1], h, training, cache ? &cache->block[1] : nullptr);
  h = nn::maxpool2_forward(h, cache ? &cache->pool2 : nullptr);
  h = nn::block_forward(enc.blocks[2], h, training, cache ? &cache->block[2] : nullptr);
  h = nn::block_forward(enc.blocks[3], h, training, cache ? &cache->block[3] : nullptr);
  return h;
}

/// Convenience eval-mode forward (running batch-norm statistics, no cache).
template <class S>
Tensor<S> encode(const Encoder<S>& enc, const Tensor<S>& images) {
  return encode(const_cast<Encoder<S>&>(enc), images, /*training=*/false, nullptr);
}

template <class S>
Tensor<S> encode_backward(const Encoder<S>& enc, const EncoderCache<S>& cache,
                          const Tensor<S>& d_out, Encoder<S>& grad) {
  Tensor<S> d = nn::block_backward(enc.blocks[3], cache.block[3], d_out, grad.blocks[3]);
  d = nn::block_backward(enc.blocks[2], cache.block[2], d, grad.blocks[2]);
  d = nn::maxpool2_backward(cache.pool2, d.batch, d.channels(), d);
  d = nn::block_backward(enc.blocks[1], cache.block[1], d, grad.blocks[1]);
  d = nn::maxpool2_backward(cache.pool1, d.batch, d.channels(), d);
  return nn::block_backward(enc.blocks[0], cache.block[0], d, grad.blocks[0]);
}

/// Global average pooling: one row per image, the spatial mean of each channel.
template <class S>
Mat<S> gap(const Tensor<S>& feature_map) {
  return nn::global_avg_pool(feature_map);
}

// ---------------------------------------------------------------------------
// Adjustment function for map-shaped levels: two conv blocks (each followed
// by a 2x2 max-pool to keep the flattened size small) and a fully connected
// layer mapping to the common dimension D. The global level, already a
// vector, uses a bare Linear instead.
// ---------------------------------------------------------------------------

template <class S>
struct Adjuster {
  nn::ConvBlock<S> block1, block2;
  nn::Linear<S> fc;
  int in_side = 0;  // spatial side of the expected input map

  static int flat_side(int in_side) { return (in_side / 2) / 2; }

  void init(Rng& rng, int in_channels, int channels, int in_side_, int dim) {
    require(flat_side(in_side_) >= 1, "Adjuster: input map too small for two pools");
    in_side = in_side_;
    block1.init(rng, in_channels, channels);
    block2.init(rng, channels, channels);
    fc.init(rng, channels * flat_side(in_side) * flat_side(in_side), dim);
  }

  void zero_like(const Adjuster& p) {
    in_side = p.in_side;
    block1.zero_like(p.block1);
    block2.zero_like(p.block2);
    fc.zero_like(p.fc);
  }

  void collect(std::vector<nn::ParamRef<S>>& refs, const std::string& prefix, Adjuster& grad) {
    block1.collect(refs, prefix + ".block1", grad.block1);
    block2.collect(refs, prefix + ".block2", grad.block2);
    register_param(refs, prefix + ".fc.weight", fc.weight, grad.fc.weight);
    register_param(refs, prefix + ".fc.bias", fc.bias, grad.fc.bias);
  }

  int dim() const { return fc.out_features(); }
};

template <class S>
struct AdjusterCache {
  nn::ConvBlockCache<S> block1, block2;
  nn::PoolCache pool1, pool2;
  Mat<S> flat;  // fc input
  int map_h = 0, map_w = 0, channels = 0;
};

/// Row-major per-image flatten: feature (b, c, y, x) lands at column
/// c*H*W + y*W + x of row b.
template <class S>
Mat<S> flatten_images(const Tensor<S>& t) {
  Mat<S> out(t.batch, static_cast<Eigen::Index>(t.channels()) * t.spatial());
  for (int b = 0; b < t.batch; ++b)
    for (int c = 0; c < t.channels(); ++c)
      out.row(b).segment(static_cast<Eigen::Index>(c) * t.spatial(), t.spatial()) =
          t.image(b).col(c).transpose();
  return out;
}

template <class S>
Tensor<S> unflatten_images(const Mat<S>& flat, int height, int width, int channels) {
  Tensor<S> out(static_cast<int>(flat.rows()), height, width, channels);
  for (int b = 0; b < out.batch; ++b)
    for (int c = 0; c < channels; ++c)
      out.image(b).col(c) =
          flat.row(b).segment(static_cast<Eigen::Index>(c) * out.spatial(), out.spatial()).transpose();
  return out;
}

template <class S>
Mat<S> adjust(Adjuster<S>& adj, const Tensor<S>& maps, bool training,
              std::type_identity_t<AdjusterCache<S>*> cache) {
  require(maps.height == adj.in_side && maps.width == adj.in_side,
          "adjust: input map side does not match the adjuster");
  Tensor<S> h = nn::block_forward(adj.block1, maps, training, cache ? &cache->block1 : nullptr);
  h = nn::maxpool2_forward(h, cache ? &cache->pool1 : nullptr);
  h = nn::block_forward(adj.block2, h, training, cache ? &cache->block2 : nullptr);
  h = nn::maxpool2_forward(h, cache ? &cache->pool2 : nullptr);
  Mat<S> flat = flatten_images(h);
  if (cache) {
    cache->flat = flat;
    cache->map_h = h.height;
    cache->map_w = h.width;
    cache->channels = h.channels();
  }
  return nn::linear_forward(adj.fc, flat);
}

template <class S>
Mat<S> adjust(const Adjuster<S>& adj, const Tensor<S>& maps) {
  return adjust(const_cast<Adjuster<S>&>(adj), maps, /*training=*/false, nullptr);
}

template <class S>
Tensor<S> adjust_backward(const Adjuster<S>& adj, const AdjusterCache<S>& cache,
                          const Mat<S>& d_out, Adjuster<S>& grad) {
  Mat<S> d_flat = nn::linear_backward(adj.fc, cache.flat, d_out, grad.fc);
  Tensor<S> d = unflatten_images(d_flat, cache.map_h, cache.map_w, cache.channels);
  d = nn::maxpool2_backward(cache.pool2, d.batch, d.channels(), d);
  d = nn::block_backward(adj.block2, cache.block2, d, grad.block2);
  d = nn::maxpool2_backward(cache.pool1, d.batch, d.channels(), d);
  return nn::block_backward(adj.block1, cache.block1, d, grad.block1);
}

/// Element-sum fusion of the three level vectors (rows, one image per row).
/// Accumulation runs at double precision: a sum of two narrower values is
/// exact there, so the triple sum rounds once and is permutation-invariant.
template <class S>
Mat<S> fuse(const Mat<S>& image_vec, const Mat<S>& object_vec, const Mat<S>& global_vec) {
  require(image_vec.rows() == object_vec.rows() && image_vec.cols() == object_vec.cols() &&
              image_vec.rows() == global_vec.rows() && image_vec.cols() == global_vec.cols(),
          "fuse: vector length mismatch");
  return (image_vec.template cast<double>() + object_vec.template cast<double>() +
          global_vec.template cast<double>())
      .template cast<S>();
}

/// Full per-image multi-level path: I = encode(image), O = encode(crop) with
/// shared weights, G = gap(I); output is the fused D-vector (one row).
template <class S>
Mat<S> encode_all_levels(const Encoder<S>& enc, const Adjuster<S>& adj_image,
                         const Adjuster<S>& adj_object, const nn::Linear<S>& adj_global,
                         const Tensor<S>& image, const Tensor<S>& object_crop) {
  Tensor<S> i_map = encode(enc, image);
  Tensor<S> o_map = encode(enc, object_crop);
  Mat<S> g_vec = gap(i_map);
  return fuse(adjust(adj_image, i_map), adjust(adj_object, o_map),
              nn::linear_forward(adj_global, g_vec));
}

}  // namespace mlsm
