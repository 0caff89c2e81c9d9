#pragma once

#include "mlsm/rng.hpp"
#include "mlsm/types.hpp"

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

namespace mlsm::nn {

// ---------------------------------------------------------------------------
// Parameter registry: flat list of (name, value span, grad span) used by the
// optimizer and the checkpoint store. Order is the registration order and is
// part of the on-disk contract for optimizer state.
// ---------------------------------------------------------------------------

template <class S>
struct ParamRef {
  std::string name;
  S* value = nullptr;
  S* grad = nullptr;  // null for non-trainable state (batch norm running stats)
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  bool trainable = true;
  Eigen::Index size() const { return rows * cols; }
};

template <class S>
void register_param(std::vector<ParamRef<S>>& refs, const std::string& name,
                    Mat<S>& value, Mat<S>& grad) {
  if (grad.rows() != value.rows() || grad.cols() != value.cols())
    grad = Mat<S>::Zero(value.rows(), value.cols());
  refs.push_back({name, value.data(), grad.data(), value.rows(), value.cols(), true});
}

template <class S>
void register_param(std::vector<ParamRef<S>>& refs, const std::string& name,
                    Vec<S>& value, Vec<S>& grad) {
  if (grad.size() != value.size()) grad = Vec<S>::Zero(value.size());
  refs.push_back({name, value.data(), grad.data(), value.size(), 1, true});
}

/// Model state that is checkpointed and hashed but never touched by the
/// optimizer.
template <class S>
void register_buffer(std::vector<ParamRef<S>>& refs, const std::string& name, Vec<S>& value) {
  refs.push_back({name, value.data(), nullptr, value.size(), 1, false});
}

template <class S>
void zero_grads(std::vector<ParamRef<S>>& refs) {
  for (auto& r : refs)
    if (r.trainable) Eigen::Map<Vec<S>>(r.grad, r.size()).setZero();
}

template <class S>
std::uint64_t params_hash(const std::vector<ParamRef<S>>& refs) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& r : refs) {
    h = fnv1a64(r.name.data(), r.name.size(), h);
    h = fnv1a64(r.value, static_cast<std::size_t>(r.size()) * sizeof(S), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// im2col / col2im for 3x3 convolutions, stride 1, zero padding 1.
// Patch matrix: one row per output pixel, columns ordered c*9 + (ky*3 + kx).
// ---------------------------------------------------------------------------

template <class S>
Mat<S> im2col3x3(const Tensor<S>& x) {
  const int B = x.batch, H = x.height, W = x.width, C = x.channels();
  Mat<S> cols = Mat<S>::Zero(static_cast<Eigen::Index>(B) * H * W, static_cast<Eigen::Index>(C) * 9);
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index j = static_cast<Eigen::Index>(c) * 9 + ky * 3 + kx;
        const int x_lo = std::max(0, 1 - kx);          // output x range with valid source
        const int x_hi = std::min(W, W + 1 - kx);      // exclusive
        if (x_hi <= x_lo) continue;
        const int len = x_hi - x_lo;
        for (int b = 0; b < B; ++b) {
          const Eigen::Index base = static_cast<Eigen::Index>(b) * H * W;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            cols.col(j).segment(base + static_cast<Eigen::Index>(y) * W + x_lo, len) =
                x.data.col(c).segment(base + static_cast<Eigen::Index>(sy) * W + x_lo + (kx - 1), len);
          }
        }
      }
    }
  }
  return cols;
}

template <class S>
void col2im3x3_add(const Mat<S>& cols, Tensor<S>& dx) {
  const int B = dx.batch, H = dx.height, W = dx.width, C = dx.channels();
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index j = static_cast<Eigen::Index>(c) * 9 + ky * 3 + kx;
        const int x_lo = std::max(0, 1 - kx);
        const int x_hi = std::min(W, W + 1 - kx);
        if (x_hi <= x_lo) continue;
        const int len = x_hi - x_lo;
        for (int b = 0; b < B; ++b) {
          const Eigen::Index base = static_cast<Eigen::Index>(b) * H * W;
          for (int y = 0; y < H; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            dx.data.col(c).segment(base + static_cast<Eigen::Index>(sy) * W + x_lo + (kx - 1), len) +=
                cols.col(j).segment(base + static_cast<Eigen::Index>(y) * W + x_lo, len);
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Layers. Parameters and their gradients are separate instances of the same
// struct; backward functions accumulate into the gradient instance.
// ---------------------------------------------------------------------------

template <class S>
struct Conv3x3 {
  Mat<S> weight;  // (in_ch*9) x out_ch
  Vec<S> bias;    // out_ch

  int in_channels() const { return static_cast<int>(weight.rows() / 9); }
  int out_channels() const { return static_cast<int>(weight.cols()); }

  void init(Rng& rng, int in_ch, int out_ch) {
    weight.resize(static_cast<Eigen::Index>(in_ch) * 9, out_ch);
    const double std = std::sqrt(2.0 / (in_ch * 9));  // He initialization
    for (Eigen::Index i = 0; i < weight.size(); ++i)
      weight.data()[i] = static_cast<S>(rng.normal() * std);
    bias = Vec<S>::Zero(out_ch);
  }

  void zero_like(const Conv3x3& p) {
    weight = Mat<S>::Zero(p.weight.rows(), p.weight.cols());
    bias = Vec<S>::Zero(p.bias.size());
  }
};

template <class S>
Tensor<S> conv_forward(const Conv3x3<S>& p, const Tensor<S>& x) {
  require(x.channels() == p.in_channels(), "conv_forward: channel mismatch");
  Tensor<S> y;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  y.data.noalias() = im2col3x3(x) * p.weight;
  y.data.rowwise() += p.bias.transpose();
  return y;
}

/// Returns dx; accumulates weight/bias gradients into `grad`.
template <class S>
Tensor<S> conv_backward(const Conv3x3<S>& p, const Tensor<S>& x, const Tensor<S>& dy,
                        Conv3x3<S>& grad) {
  Mat<S> cols = im2col3x3(x);  // recomputed; caching it across blocks is too heavy
  grad.weight.noalias() += cols.transpose() * dy.data;
  grad.bias.noalias() += dy.data.colwise().sum().transpose();
  Mat<S> dcols;
  dcols.noalias() = dy.data * p.weight.transpose();
  Tensor<S> dx(x.batch, x.height, x.width, x.channels());
  col2im3x3_add(dcols, dx);
  return dx;
}

template <class S>
struct BatchNorm {
  Vec<S> gamma, beta;
  Vec<S> running_mean, running_var;
  S eps = static_cast<S>(1e-5);
  S momentum = static_cast<S>(0.1);

  void init(int channels) {
    gamma = Vec<S>::Ones(channels);
    beta = Vec<S>::Zero(channels);
    running_mean = Vec<S>::Zero(channels);
    running_var = Vec<S>::Ones(channels);
  }

  void zero_like(const BatchNorm& p) {
    gamma = Vec<S>::Zero(p.gamma.size());
    beta = Vec<S>::Zero(p.beta.size());
    running_mean = Vec<S>::Zero(p.running_mean.size());
    running_var = Vec<S>::Zero(p.running_var.size());
  }
};

template <class S>
struct BnCache {
  Vec<S> mean, inv_std;
};

/// Training mode normalizes with batch statistics over all rows (batch x
/// spatial) and updates running averages; inference uses the running values.
template <class S>
Tensor<S> bn_forward(BatchNorm<S>& p, const Tensor<S>& x, bool training,
                     std::type_identity_t<BnCache<S>*> cache) {
  const int C = x.channels();
  Tensor<S> y;
  y.batch = x.batch;
  y.height = x.height;
  y.width = x.width;
  y.data.resize(x.rows(), C);
  Vec<S> mean(C), var(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      mean(c) = x.data.col(c).mean();
      var(c) = (x.data.col(c).array() - mean(c)).square().mean();
    }
    p.running_mean = (1 - p.momentum) * p.running_mean + p.momentum * mean;
    p.running_var = (1 - p.momentum) * p.running_var + p.momentum * var;
  } else {
    mean = p.running_mean;
    var = p.running_var;
  }
  Vec<S> inv_std = (var.array() + p.eps).rsqrt();
  for (int c = 0; c < C; ++c)
    y.data.col(c) = ((x.data.col(c).array() - mean(c)) * (inv_std(c) * p.gamma(c)) + p.beta(c)).matrix();
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

/// Backward through training-mode batch normalization.
template <class S>
Tensor<S> bn_backward(const BatchNorm<S>& p, const Tensor<S>& x, const BnCache<S>& cache,
                      const Tensor<S>& dy, BatchNorm<S>& grad) {
  const auto n = static_cast<S>(x.rows());
  const int C = x.channels();
  Tensor<S> dx;
  dx.batch = x.batch;
  dx.height = x.height;
  dx.width = x.width;
  dx.data.resize(x.rows(), C);
  for (int c = 0; c < C; ++c) {
    auto xhat = ((x.data.col(c).array() - cache.mean(c)) * cache.inv_std(c)).eval();
    auto dyc = dy.data.col(c).array();
    const S dgamma = (dyc * xhat).sum();
    const S dbeta = dyc.sum();
    grad.gamma(c) += dgamma;
    grad.beta(c) += dbeta;
    // dxhat = dy * gamma; dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
    const S g = p.gamma(c);
    dx.data.col(c) =
        ((dyc * g * n - dbeta * g - xhat * (dgamma * g)) * (cache.inv_std(c) / n)).matrix();
  }
  return dx;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> y = x;
  y.data = y.data.cwiseMax(S(0));
  return y;
}

/// dy masked by the post-activation output (y > 0 iff pre-activation > 0).
template <class S>
Tensor<S> relu_backward(const Tensor<S>& y, const Tensor<S>& dy) {
  Tensor<S> dx = dy;
  dx.data = ((y.data.array() > S(0)).template cast<S>() * dy.data.array()).matrix();
  return dx;
}

struct PoolCache {
  int in_h = 0, in_w = 0;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax;  // out rows x C
};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
template <class S>
Tensor<S> maxpool2_forward(const Tensor<S>& x, PoolCache* cache) {
  const int B = x.batch, H = x.height, W = x.width, C = x.channels();
  const int OH = H / 2, OW = W / 2;
  require(OH >= 1 && OW >= 1, "maxpool2: input too small");
  Tensor<S> y(B, OH, OW, C);
  if (cache) {
    cache->in_h = H;
    cache->in_w = W;
    cache->argmax.resize(y.rows(), C);
  }
  for (int b = 0; b < B; ++b) {
    const Eigen::Index ibase = static_cast<Eigen::Index>(b) * H * W;
    const Eigen::Index obase = static_cast<Eigen::Index>(b) * OH * OW;
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        const Eigen::Index r00 = ibase + static_cast<Eigen::Index>(2 * oy) * W + 2 * ox;
        const Eigen::Index rows[4] = {r00, r00 + 1, r00 + W, r00 + W + 1};
        const Eigen::Index out_r = obase + static_cast<Eigen::Index>(oy) * OW + ox;
        for (int c = 0; c < C; ++c) {
          S best = x.data(rows[0], c);
          Eigen::Index best_r = rows[0];
          for (int k = 1; k < 4; ++k) {
            const S v = x.data(rows[k], c);
            if (v > best) {
              best = v;
              best_r = rows[k];
            }
          }
          y.data(out_r, c) = best;
          if (cache) cache->argmax(out_r, c) = best_r;
        }
      }
    }
  }
  return y;
}

template <class S>
Tensor<S> maxpool2_backward(const PoolCache& cache, int batch, int channels,
                            const Tensor<S>& dy) {
  Tensor<S> dx(batch, cache.in_h, cache.in_w, channels);
  for (Eigen::Index r = 0; r < dy.rows(); ++r)
    for (int c = 0; c < channels; ++c) dx.data(cache.argmax(r, c), c) += dy.data(r, c);
  return dx;
}

template <class S>
struct Linear {
  Mat<S> weight;  // in x out
  Vec<S> bias;    // out

  int in_features() const { return static_cast<int>(weight.rows()); }
  int out_features() const { return static_cast<int>(weight.cols()); }

  void init(Rng& rng, int in, int out) {
    weight.resize(in, out);
    const double std = std::sqrt(2.0 / in);
    for (Eigen::Index i = 0; i < weight.size(); ++i)
      weight.data()[i] = static_cast<S>(rng.normal() * std);
    bias = Vec<S>::Zero(out);
  }

  void zero_like(const Linear& p) {
    weight = Mat<S>::Zero(p.weight.rows(), p.weight.cols());
    bias = Vec<S>::Zero(p.bias.size());
  }
};

template <class S>
Mat<S> linear_forward(const Linear<S>& p, const Mat<S>& x) {
  require(x.cols() == p.weight.rows(), "linear_forward: feature size mismatch");
  Mat<S> y;
  y.noalias() = x * p.weight;
  y.rowwise() += p.bias.transpose();
  return y;
}

template <class S>
Mat<S> linear_backward(const Linear<S>& p, const Mat<S>& x, const Mat<S>& dy,
                       Linear<S>& grad) {
  grad.weight.noalias() += x.transpose() * dy;
  grad.bias.noalias() += dy.colwise().sum().transpose();
  Mat<S> dx;
  dx.noalias() = dy * p.weight.transpose();
  return dx;
}

/// Spatial mean per channel: one output row per image.
template <class S>
Mat<S> global_avg_pool(const Tensor<S>& x) {
  Mat<S> y(x.batch, x.channels());
  for (int b = 0; b < x.batch; ++b) y.row(b) = x.image(b).colwise().mean();
  return y;
}

template <class S>
Tensor<S> global_avg_pool_backward(const Mat<S>& dy, int height, int width) {
  const int B = static_cast<int>(dy.rows());
  Tensor<S> dx(B, height, width, static_cast<int>(dy.cols()));
  const S inv_z = S(1) / static_cast<S>(height * width);
  for (int b = 0; b < B; ++b)
    dx.image(b) = (dy.row(b) * inv_z).replicate(height * width, 1);
  return dx;
}

template <class S>
Mat<S> sigmoid(const Mat<S>& z) {
  return ((-z.array()).exp() + S(1)).inverse().matrix();
}

/// Mean cross-entropy over the batch; also returns d(loss)/d(logits).
template <class S>
S softmax_cross_entropy(const Mat<S>& logits, const std::vector<int>& labels,
                        std::type_identity_t<Mat<S>*> dlogits) {
  const Eigen::Index n = logits.rows();
  require(static_cast<Eigen::Index>(labels.size()) == n, "softmax_cross_entropy: label count");
  Mat<S> p = logits;
  S loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const S m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    const S z = p.row(i).sum();
    p.row(i) /= z;
    loss -= std::log(std::max(p(i, labels[static_cast<std::size_t>(i)]), S(1e-30)));
  }
  loss /= static_cast<S>(n);
  if (dlogits) {
    *dlogits = p;
    for (Eigen::Index i = 0; i < n; ++i) (*dlogits)(i, labels[static_cast<std::size_t>(i)]) -= S(1);
    *dlogits /= static_cast<S>(n);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Convolutional block: 3x3 conv (64 filters in the full model) + batch norm +
// ReLU. The cache keeps what backward needs and nothing else.
// ---------------------------------------------------------------------------

template <class S>
struct ConvBlock {
  Conv3x3<S> conv;
  BatchNorm<S> bn;

  void init(Rng& rng, int in_ch, int out_ch) {
    conv.init(rng, in_ch, out_ch);
    bn.init(out_ch);
  }

  void zero_like(const ConvBlock& p) {
    conv.zero_like(p.conv);
    bn.zero_like(p.bn);
  }

  void collect(std::vector<ParamRef<S>>& refs, const std::string& prefix, ConvBlock& grad) {
    register_param(refs, prefix + ".conv.weight", conv.weight, grad.conv.weight);
    register_param(refs, prefix + ".conv.bias", conv.bias, grad.conv.bias);
    register_param(refs, prefix + ".bn.gamma", bn.gamma, grad.bn.gamma);
    register_param(refs, prefix + ".bn.beta", bn.beta, grad.bn.beta);
    register_buffer(refs, prefix + ".bn.running_mean", bn.running_mean);
    register_buffer(refs, prefix + ".bn.running_var", bn.running_var);
  }
};

template <class S>
struct ConvBlockCache {
  Tensor<S> input;    // block input
  Tensor<S> pre_bn;   // conv output
  Tensor<S> output;   // post-ReLU (ReLU mask source)
  BnCache<S> bn;
};

template <class S>
Tensor<S> block_forward(ConvBlock<S>& p, const Tensor<S>& x, bool training,
                        std::type_identity_t<ConvBlockCache<S>*> cache) {
  Tensor<S> pre_bn = conv_forward(p.conv, x);
  Tensor<S> normed = bn_forward(p.bn, pre_bn, training, cache ? &cache->bn : nullptr);
  Tensor<S> out = relu(normed);
  if (cache) {
    cache->input = x;
    cache->pre_bn = std::move(pre_bn);
    cache->output = out;
  }
  return out;
}

template <class S>
Tensor<S> block_backward(const ConvBlock<S>& p, const ConvBlockCache<S>& cache,
                         const Tensor<S>& dy, ConvBlock<S>& grad) {
  Tensor<S> d_normed = relu_backward(cache.output, dy);
  Tensor<S> d_pre_bn = bn_backward(p.bn, cache.pre_bn, cache.bn, d_normed, grad.bn);
  return conv_backward(p.conv, cache.input, d_pre_bn, grad.conv);
}

// ---------------------------------------------------------------------------
// Adam, operating on a parameter registry. Moment buffers are addressed by
// registry order; `t` is the shared step counter.
// ---------------------------------------------------------------------------

template <class S>
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<Vec<S>> m, v;

  void reset(const std::vector<ParamRef<S>>& refs) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& r : refs) {
      // zero-size placeholders keep the buffers aligned with the registry
      m.push_back(Vec<S>::Zero(r.trainable ? r.size() : 0));
      v.push_back(Vec<S>::Zero(r.trainable ? r.size() : 0));
    }
  }

  void step(const std::vector<ParamRef<S>>& refs, double lr) {
    if (m.size() != refs.size()) reset(refs);
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& r = refs[i];
      if (!r.trainable) continue;
      Eigen::Map<Arr<S>> value(r.value, r.size());
      Eigen::Map<const Arr<S>> grad(r.grad, r.size());
      auto mi = m[i].array();
      auto vi = v[i].array();
      mi = S(beta1) * mi + S(1.0 - beta1) * grad;
      vi = S(beta2) * vi + S(1.0 - beta2) * grad.square();
      value -= S(lr) * (mi / S(bc1)) / ((vi / S(bc2)).sqrt() + S(eps));
    }
  }
};

}  // namespace mlsm::nn
