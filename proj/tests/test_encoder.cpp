#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlsm/encoder.hpp"
#include "support/test_util.hpp"

#include <numeric>

using namespace mlsm;
using namespace mlsm::testutil;

namespace {

// Symbolic shape calculator, independent of the layer code: four same-size
// convolutions with a halving pool after the first and second.
int expected_map_side(int input) {
  int s = input;
  for (int block = 1; block <= 4; ++block) {
    // 3x3 conv, pad 1, stride 1: size unchanged
    if (block == 1 || block == 2) s = s / 2;
  }
  return s;
}

template <class S>
S dot_loss(const Mat<S>& proj, const Mat<S>& value) {
  return (proj.array() * value.array()).sum();
}

}  // namespace

TEST_CASE("encode: 3x84x84 -> 64x21x21 and other sizes follow the calculator") {
  Rng rng(1);
  Encoder<float> enc;
  enc.init(rng, 3, 64);
  Tensor<float> x = random_tensor<float>(rng, 1, 84, 84, 3, 0.5);
  Tensor<float> y = encode(enc, x);
  CHECK(y.channels() == 64);
  CHECK(y.height == 21);
  CHECK(y.width == 21);
  CHECK(expected_map_side(84) == 21);
  CHECK(encoder_map_side(84) == expected_map_side(84));
  for (int side : {28, 42, 64}) CHECK(encoder_map_side(side) == expected_map_side(side));
}

TEST_CASE("encode: zero weights and fresh batch norm give an all-zero map") {
  Encoder<float> enc;
  Rng rng(2);
  enc.init(rng, 3, 8);
  for (auto& block : enc.blocks) {
    block.conv.weight.setZero();
    block.conv.bias.setZero();
  }
  Rng rng2(3);
  Tensor<float> x = random_tensor<float>(rng2, 2, 28, 28, 3);
  Tensor<float> y = encode(enc, x);
  CHECK(y.data.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("encode: batch of 2 equals one-by-one at inference") {
  Rng rng(4);
  Encoder<float> enc;
  enc.init(rng, 3, 16);
  Tensor<float> batch = random_tensor<float>(rng, 2, 28, 28, 3, 0.5);
  Tensor<float> joint = encode(enc, batch);
  Tensor<float> a = encode(enc, slice_batch(batch, 0, 1));
  Tensor<float> b = encode(enc, slice_batch(batch, 1, 1));
  CHECK((joint.image(0) - a.image(0)).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK((joint.image(1) - b.image(0)).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("encode is permutation-equivariant over the batch at inference") {
  Rng rng(5);
  Encoder<float> enc;
  enc.init(rng, 3, 8);
  Tensor<float> batch = random_tensor<float>(rng, 4, 16, 16, 3, 0.5);
  Tensor<float> out = encode(enc, batch);

  std::vector<int> perm = {2, 0, 3, 1};
  Tensor<float> shuffled(4, 16, 16, 3);
  for (int i = 0; i < 4; ++i) shuffled.image(i) = batch.image(perm[static_cast<std::size_t>(i)]);
  Tensor<float> out_perm = encode(enc, shuffled);
  for (int i = 0; i < 4; ++i)
    CHECK((out_perm.image(i) - out.image(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
          1e-6f);
}

TEST_CASE("gap: constants, zeros, naive triple-loop oracle, encode consistency") {
  Tensor<double> c(2, 5, 7, 3);
  c.data.setConstant(0.42);
  Mat<double> g = gap(c);
  CHECK(g.rows() == 2);
  CHECK(g.cols() == 3);
  CHECK((g.array() - 0.42).abs().maxCoeff() < 1e-15);

  Tensor<double> z(1, 4, 4, 2);
  CHECK(gap(z).cwiseAbs().maxCoeff() == 0.0);

  Rng rng(6);
  Tensor<double> m = random_tensor<double>(rng, 1, 21, 21, 64);
  Mat<double> got = gap(m);
  for (int ch = 0; ch < 64; ++ch) {
    double acc = 0;
    for (int y = 0; y < 21; ++y)
      for (int x = 0; x < 21; ++x) acc += m.at(0, ch, y, x);
    CHECK(std::abs(got(0, ch) - acc / (21.0 * 21.0)) < 1e-6);
  }

  // gap(encode(x)) equals the per-channel mean of encode(x)
  Encoder<double> enc;
  enc.init(rng, 3, 8);
  Tensor<double> img = random_tensor<double>(rng, 1, 28, 28, 3, 0.5);
  Tensor<double> feat = encode(enc, img);
  Mat<double> pooled = gap(feat);
  for (int ch = 0; ch < 8; ++ch)
    CHECK(pooled(0, ch) == doctest::Approx(feat.data.col(ch).mean()).epsilon(1e-12));
}

TEST_CASE("adjust: output length D, determinism, level/shape mismatch") {
  Rng rng(7);
  Adjuster<float> adj;
  adj.init(rng, 8, 8, 12, 5);
  Tensor<float> maps = random_tensor<float>(rng, 3, 12, 12, 8, 0.5);
  Mat<float> out = adjust(adj, maps);
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 5);
  Mat<float> again = adjust(adj, maps);
  CHECK((out - again).cwiseAbs().maxCoeff() == 0.0f);

  Tensor<float> wrong = random_tensor<float>(rng, 1, 10, 10, 8);
  CHECK_THROWS(adjust(adj, wrong));
}

TEST_CASE("adjust gradient matches finite differences") {
  Rng rng(8);
  Adjuster<double> adj, grad;
  adj.init(rng, 3, 4, 8, 4);
  grad.zero_like(adj);
  Tensor<double> maps = random_tensor<double>(rng, 2, 8, 8, 3, 0.7);
  Mat<double> proj = random_mat<double>(rng, 2, 4);

  std::vector<nn::ParamRef<double>> refs;
  adj.collect(refs, "adj", grad);

  auto loss = [&]() {
    Adjuster<double> local = adj;
    return dot_loss(proj, adjust(local, maps, true, nullptr));
  };
  auto numeric = numeric_grads<double>(refs, loss, 1e-5);

  nn::zero_grads(refs);
  Adjuster<double> local = adj;
  AdjusterCache<double> cache;
  adjust(local, maps, true, &cache);
  adjust_backward(adj, cache, proj, grad);
  CHECK(max_rel_err(analytic_grads(refs), numeric, 1e-5) < 1e-3);
}

TEST_CASE("fuse: identities, commutativity, naive oracle, mismatch error") {
  Rng rng(9);
  Mat<float> a = random_mat<float>(rng, 4, 6);
  Mat<float> b = random_mat<float>(rng, 4, 6);
  Mat<float> c = random_mat<float>(rng, 4, 6);
  Mat<float> zero = Mat<float>::Zero(4, 6);

  CHECK((fuse(a, zero, zero) - a).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((fuse(zero, b, zero) - b).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((fuse(zero, zero, c) - c).cwiseAbs().maxCoeff() == 0.0f);

  // exact commutativity over all six argument orders
  Mat<float> ref = fuse(a, b, c);
  CHECK((ref - fuse(a, c, b)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((ref - fuse(b, a, c)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((ref - fuse(b, c, a)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((ref - fuse(c, a, b)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((ref - fuse(c, b, a)).cwiseAbs().maxCoeff() == 0.0f);

  // naive per-element oracle at the documented accumulation precision
  for (Eigen::Index i = 0; i < ref.rows(); ++i)
    for (Eigen::Index j = 0; j < ref.cols(); ++j)
      CHECK(ref(i, j) == static_cast<float>(static_cast<double>(a(i, j)) +
                                            static_cast<double>(b(i, j)) +
                                            static_cast<double>(c(i, j))));

  Mat<float> short_vec = Mat<float>::Zero(4, 5);
  CHECK_THROWS(fuse(a, b, short_vec));
}

TEST_CASE("encode_all_levels: shared adjusters agree and I-only reduction") {
  Rng rng(10);
  Encoder<double> enc;
  enc.init(rng, 3, 8);
  Adjuster<double> adj;
  adj.init(rng, 8, 8, encoder_map_side(28), 6);
  nn::Linear<double> adj_g;
  adj_g.init(rng, 8, 6);
  Tensor<double> image = random_tensor<double>(rng, 1, 28, 28, 3, 0.5);

  // object crop identical to the image and the same adjuster on both levels:
  // the two map-level summands must agree exactly
  Tensor<double> i_map = encode(enc, image);
  Mat<double> adj_i = adjust(adj, i_map);
  Mat<double> full = encode_all_levels(enc, adj, adj, adj_g, image, image);
  CHECK(full.cols() == 6);
  Mat<double> manual = fuse(adj_i, adj_i, nn::linear_forward(adj_g, gap(i_map)));
  CHECK((full - manual).cwiseAbs().maxCoeff() < 1e-12);

  // zeroing the object and global branches leaves exactly adjust(image, I)
  nn::Linear<double> zero_g = adj_g;
  zero_g.weight.setZero();
  zero_g.bias.setZero();
  Adjuster<double> zero_adj = adj;
  zero_adj.fc.weight.setZero();
  zero_adj.fc.bias.setZero();
  Mat<double> reduced = encode_all_levels(enc, adj, zero_adj, zero_g, image, image);
  CHECK((reduced - adj_i).cwiseAbs().maxCoeff() == 0.0);
}
