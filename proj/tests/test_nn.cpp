#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlsm/nn.hpp"
#include "support/test_util.hpp"

using namespace mlsm;
using namespace mlsm::testutil;

namespace {

// Direct triple-loop 3x3 convolution, zero padding 1. Kept deliberately dumb.
template <class S>
Tensor<S> naive_conv(const nn::Conv3x3<S>& p, const Tensor<S>& x) {
  Tensor<S> y(x.batch, x.height, x.width, p.out_channels());
  for (int b = 0; b < x.batch; ++b)
    for (int oc = 0; oc < p.out_channels(); ++oc)
      for (int yy = 0; yy < x.height; ++yy)
        for (int xx = 0; xx < x.width; ++xx) {
          double acc = p.bias(oc);
          for (int ic = 0; ic < x.channels(); ++ic)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int sy = yy + ky - 1, sx = xx + kx - 1;
                if (sy < 0 || sy >= x.height || sx < 0 || sx >= x.width) continue;
                acc += static_cast<double>(p.weight(ic * 9 + ky * 3 + kx, oc)) *
                       static_cast<double>(x.at(b, ic, sy, sx));
              }
          y.at(b, oc, yy, xx) = static_cast<S>(acc);
        }
  return y;
}

// Random linear functional over an output makes a scalar loss whose gradient
// exercises every entry.
template <class S>
S dot_loss(const Mat<S>& proj, const Mat<S>& value) {
  return (proj.array() * value.array()).sum();
}

}  // namespace

TEST_CASE("conv forward matches a naive direct convolution") {
  Rng rng(7);
  nn::Conv3x3<double> conv;
  conv.init(rng, 3, 5);
  for (Eigen::Index i = 0; i < conv.bias.size(); ++i) conv.bias(i) = rng.normal();
  Tensor<double> x = random_tensor<double>(rng, 2, 6, 7, 3);
  Tensor<double> got = nn::conv_forward(conv, x);
  Tensor<double> want = naive_conv(conv, x);
  CHECK(got.same_shape(want));
  CHECK((got.data - want.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("conv backward matches finite differences") {
  Rng rng(11);
  nn::Conv3x3<double> conv, grad;
  conv.init(rng, 2, 3);
  grad.zero_like(conv);
  Tensor<double> x = random_tensor<double>(rng, 2, 5, 4, 2);
  Mat<double> proj = random_mat<double>(rng, x.rows(), 3);

  std::vector<nn::ParamRef<double>> refs;
  register_param(refs, "w", conv.weight, grad.weight);
  register_param(refs, "b", conv.bias, grad.bias);

  auto loss = [&]() { return dot_loss(proj, nn::conv_forward(conv, x).data); };
  auto numeric = numeric_grads<double>(refs, loss, 1e-6);

  nn::zero_grads(refs);
  Tensor<double> dy;
  dy.batch = x.batch;
  dy.height = x.height;
  dy.width = x.width;
  dy.data = proj;
  Tensor<double> dx = nn::conv_backward(conv, x, dy, grad);
  CHECK(max_rel_err(analytic_grads(refs), numeric, 1e-8) < 1e-6);

  std::vector<nn::ParamRef<double>> xref;
  Mat<double> xg = Mat<double>::Zero(x.data.rows(), x.data.cols());
  register_param(xref, "x", x.data, xg);
  auto numeric_x = numeric_grads<double>(xref, loss, 1e-6);
  std::vector<Vec<double>> dx_flat = {Eigen::Map<Vec<double>>(dx.data.data(), dx.data.size())};
  CHECK(max_rel_err(dx_flat, numeric_x, 1e-8) < 1e-6);
}

TEST_CASE("batch norm: training statistics and fresh-state inference") {
  Rng rng(3);
  nn::BatchNorm<double> bn;
  bn.init(4);
  Tensor<double> x = random_tensor<double>(rng, 3, 4, 4, 4, 2.0);

  nn::BnCache<double> cache;
  Tensor<double> y = nn::bn_forward(bn, x, true, &cache);
  for (int c = 0; c < 4; ++c) {
    CHECK(y.data.col(c).mean() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK((y.data.col(c).array() - y.data.col(c).mean()).square().mean() ==
          doctest::Approx(1.0).epsilon(1e-4));
  }

  nn::BatchNorm<double> fresh;
  fresh.init(2);
  Tensor<double> zeros(1, 3, 3, 2);
  Tensor<double> out = nn::bn_forward(fresh, zeros, false, nullptr);
  CHECK(out.data.cwiseAbs().maxCoeff() == 0.0);  // exact: (0-0)*gamma+0
}

TEST_CASE("batch norm backward matches finite differences") {
  Rng rng(13);
  nn::BatchNorm<double> bn, grad;
  bn.init(3);
  for (Eigen::Index i = 0; i < 3; ++i) {
    bn.gamma(i) = 1.0 + 0.3 * rng.normal();
    bn.beta(i) = 0.2 * rng.normal();
  }
  grad.zero_like(bn);
  Tensor<double> x = random_tensor<double>(rng, 2, 3, 4, 3);
  Mat<double> proj = random_mat<double>(rng, x.rows(), 3);

  std::vector<nn::ParamRef<double>> refs;
  register_param(refs, "gamma", bn.gamma, grad.gamma);
  register_param(refs, "beta", bn.beta, grad.beta);
  Mat<double> xg = Mat<double>::Zero(x.rows(), 3);
  register_param(refs, "x", x.data, xg);

  auto loss = [&]() {
    nn::BatchNorm<double> local = bn;  // keep running stats untouched across evals
    return dot_loss(proj, nn::bn_forward(local, x, true, nullptr).data);
  };
  auto numeric = numeric_grads<double>(refs, loss, 1e-6);

  nn::zero_grads(refs);
  nn::BatchNorm<double> local = bn;
  nn::BnCache<double> cache;
  nn::bn_forward(local, x, true, &cache);
  Tensor<double> dy;
  dy.batch = x.batch;
  dy.height = x.height;
  dy.width = x.width;
  dy.data = proj;
  Tensor<double> dx = nn::bn_backward(bn, x, cache, dy, grad);
  xg = dx.data;
  CHECK(max_rel_err(analytic_grads(refs), numeric, 1e-6) < 1e-5);
}

TEST_CASE("max pool 2x2: forward picks maxima, backward routes to argmax") {
  Tensor<double> x(1, 4, 4, 1);
  int v = 0;
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx) x.at(0, 0, y, xx) = (v = (v * 7 + 3) % 17);
  nn::PoolCache cache;
  Tensor<double> y = nn::maxpool2_forward(x, &cache);
  CHECK(y.height == 2);
  CHECK(y.width == 2);
  for (int oy = 0; oy < 2; ++oy)
    for (int ox = 0; ox < 2; ++ox) {
      double m = -1;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) m = std::max(m, x.at(0, 0, 2 * oy + dy, 2 * ox + dx));
      CHECK(y.at(0, 0, oy, ox) == m);
    }

  Tensor<double> dy(1, 2, 2, 1);
  dy.data.setOnes();
  Tensor<double> dx = nn::maxpool2_backward(cache, 1, 1, dy);
  CHECK(dx.data.sum() == 4.0);       // each output routes one unit
  CHECK(dx.data.maxCoeff() == 1.0);  // no double routing

  Tensor<double> odd(1, 5, 5, 2);
  CHECK(nn::maxpool2_forward(odd, nullptr).height == 2);  // trailing row dropped
}

TEST_CASE("linear + gap backward match finite differences") {
  Rng rng(17);
  nn::Linear<double> fc, grad;
  fc.init(rng, 6, 4);
  grad.zero_like(fc);
  Tensor<double> x = random_tensor<double>(rng, 3, 2, 3, 6);
  Mat<double> proj = random_mat<double>(rng, 3, 4);

  std::vector<nn::ParamRef<double>> refs;
  register_param(refs, "w", fc.weight, grad.weight);
  register_param(refs, "b", fc.bias, grad.bias);
  Mat<double> xg = Mat<double>::Zero(x.rows(), 6);
  register_param(refs, "x", x.data, xg);

  auto loss = [&]() { return dot_loss(proj, nn::linear_forward(fc, nn::global_avg_pool(x))); };
  auto numeric = numeric_grads<double>(refs, loss, 1e-6);

  nn::zero_grads(refs);
  Mat<double> pooled = nn::global_avg_pool(x);
  Mat<double> d_pooled = nn::linear_backward(fc, pooled, proj, grad);
  Tensor<double> dx = nn::global_avg_pool_backward(d_pooled, x.height, x.width);
  xg = dx.data;  // lvalue copy keeps the registered grad pointer valid
  CHECK(max_rel_err(analytic_grads(refs), numeric, 1e-8) < 1e-6);
}

TEST_CASE("conv block end-to-end gradient (conv+bn+relu)") {
  Rng rng(23);
  nn::ConvBlock<double> block, grad;
  block.init(rng, 2, 3);
  grad.zero_like(block);
  Tensor<double> x = random_tensor<double>(rng, 2, 4, 4, 2);
  Mat<double> proj = random_mat<double>(rng, x.rows(), 3);

  std::vector<nn::ParamRef<double>> refs;
  block.collect(refs, "blk", grad);
  Mat<double> xg = Mat<double>::Zero(x.rows(), 2);
  register_param(refs, "x", x.data, xg);

  auto loss = [&]() {
    nn::ConvBlock<double> local = block;
    return dot_loss(proj, nn::block_forward(local, x, true, nullptr).data);
  };
  auto numeric = numeric_grads<double>(refs, loss, 1e-6);

  nn::zero_grads(refs);
  nn::ConvBlock<double> local = block;
  nn::ConvBlockCache<double> cache;
  nn::block_forward(local, x, true, &cache);
  Tensor<double> dy;
  dy.batch = x.batch;
  dy.height = x.height;
  dy.width = x.width;
  dy.data = proj;
  Tensor<double> dx = nn::block_backward(block, cache, dy, grad);
  xg = dx.data;
  // The conv bias gradient is exactly zero through batch norm, so the floor
  // must sit above finite-difference noise on those entries.
  CHECK(max_rel_err(analytic_grads(refs), numeric, 1e-4) < 1e-4);
}

TEST_CASE("softmax cross entropy: values and gradient") {
  Mat<double> logits(2, 3);
  logits << 2.0, 1.0, 0.1, 0.5, 2.5, 0.0;
  std::vector<int> labels = {0, 1};
  Mat<double> dlogits;
  const double loss = nn::softmax_cross_entropy(logits, labels, &dlogits);

  double expect = 0;
  for (int i = 0; i < 2; ++i) {
    double z = 0;
    for (int j = 0; j < 3; ++j) z += std::exp(logits(i, j));
    expect -= std::log(std::exp(logits(i, labels[static_cast<std::size_t>(i)])) / z);
  }
  expect /= 2;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

  std::vector<nn::ParamRef<double>> refs;
  Mat<double> lg = Mat<double>::Zero(2, 3);
  register_param(refs, "logits", logits, lg);
  auto numeric = numeric_grads<double>(
      refs, [&]() { return nn::softmax_cross_entropy(logits, labels, nullptr); }, 1e-6);
  lg = dlogits;
  CHECK(max_rel_err(analytic_grads(refs), numeric, 1e-8) < 1e-6);
}

TEST_CASE("adam drives a quadratic to its minimum") {
  Mat<double> x(1, 1);
  x(0, 0) = 0.0;
  Mat<double> g = Mat<double>::Zero(1, 1);
  std::vector<nn::ParamRef<double>> refs;
  register_param(refs, "x", x, g);
  nn::Adam<double> adam;
  adam.reset(refs);
  for (int step = 0; step < 2000; ++step) {
    g(0, 0) = 2.0 * (x(0, 0) - 3.0);
    adam.step(refs, 0.05);
  }
  CHECK(x(0, 0) == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("params hash tracks values") {
  Rng rng(5);
  nn::Linear<float> fc, grad;
  fc.init(rng, 3, 2);
  grad.zero_like(fc);
  std::vector<nn::ParamRef<float>> refs;
  register_param(refs, "w", fc.weight, grad.weight);
  register_param(refs, "b", fc.bias, grad.bias);
  const auto h0 = nn::params_hash(refs);
  CHECK(nn::params_hash(refs) == h0);
  fc.weight(0, 0) += 1.0f;
  CHECK(nn::params_hash(refs) != h0);
}
