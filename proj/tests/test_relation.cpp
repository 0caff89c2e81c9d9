#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlsm/model.hpp"
#include "support/test_util.hpp"

using namespace mlsm;
using namespace mlsm::testutil;

TEST_CASE("average_support: k=1 identity, constant stack, naive mean oracle") {
  Rng rng(1);
  Mat<double> one = random_mat<double>(rng, 1, 7);
  Vec<double> rep = average_support(one);
  CHECK((rep.transpose() - one.row(0)).cwiseAbs().maxCoeff() == 0.0);

  Mat<double> same(4, 5);
  for (int i = 0; i < 4; ++i) same.row(i) = one.row(0).head(5);
  CHECK((average_support(same).transpose() - one.row(0).head(5)).cwiseAbs().maxCoeff() < 1e-15);

  Mat<double> stack = random_mat<double>(rng, 5, 6);
  Vec<double> got = average_support(stack);
  for (int j = 0; j < 6; ++j) {
    double acc = 0;
    for (int i = 0; i < 5; ++i) acc += stack(i, j);
    CHECK(std::abs(got(j) - acc / 5.0) < 1e-6);
  }

  Mat<double> empty(0, 3);
  CHECK_THROWS(average_support(empty));
}

TEST_CASE("relation_score: sigmoid range, zero-params midpoint, order sensitivity") {
  Rng rng(2);
  SimilarityHead<float> head;
  head.init(rng, 12, 8);
  Vec<float> a = random_mat<float>(rng, 6, 1).col(0);
  Vec<float> b = random_mat<float>(rng, 6, 1).col(0);
  const float s = relation_score(head, a, b);
  CHECK(s > 0.0f);
  CHECK(s < 1.0f);

  SimilarityHead<float> zero = head;
  zero.fc1.weight.setZero();
  zero.fc1.bias.setZero();
  zero.fc2.weight.setZero();
  zero.fc2.bias.setZero();
  CHECK(relation_score(zero, a, b) == 0.5f);  // sigmoid(0)

  // the head is not symmetric; concatenation order matters
  CHECK(relation_score(head, a, b) != relation_score(head, b, a));

  Vec<float> bad = Vec<float>::Zero(5);
  CHECK_THROWS(relation_score(head, a, bad));
}

TEST_CASE("similarity head gradient matches finite differences") {
  Rng rng(3);
  SimilarityHead<double> head, grad;
  head.init(rng, 10, 6);
  grad.zero_like(head);
  Mat<double> pairs = random_mat<double>(rng, 7, 10);
  Vec<double> proj = random_mat<double>(rng, 7, 1).col(0);

  std::vector<nn::ParamRef<double>> refs;
  head.collect(refs, "head", grad);

  // loss = proj . scores, differentiated through the sigmoid
  auto loss = [&]() {
    SimilarityHead<double> local = head;
    return proj.dot(head_forward(local, pairs, nullptr));
  };
  auto numeric = numeric_grads<double>(refs, loss, 1e-6);

  nn::zero_grads(refs);
  SimilarityHead<double> local = head;
  HeadCache<double> cache;
  Vec<double> scores = head_forward(local, pairs, &cache);
  head_backward(head, cache, sigmoid_grad(scores, proj), grad);
  CHECK(max_rel_err(analytic_grads(refs), numeric, 1e-6) < 1e-4);
}

TEST_CASE("image_level_pair_concat: shape, order, channel identity") {
  Rng rng(4);
  Tensor<float> a = random_tensor<float>(rng, 1, 21, 21, 64);
  Tensor<float> b = random_tensor<float>(rng, 1, 21, 21, 64);
  Tensor<float> ab = image_level_pair_concat(a, b);
  CHECK(ab.channels() == 128);
  CHECK(ab.height == 21);
  CHECK(ab.width == 21);
  CHECK((ab.data.col(0) - a.data.col(0)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((ab.data.col(64) - b.data.col(0)).cwiseAbs().maxCoeff() == 0.0f);
  Tensor<float> ba = image_level_pair_concat(b, a);
  CHECK((ab.data - ba.data).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("episode_loss: exact values, naive oracle, errors") {
  Mat<double> perfect(2, 3);
  perfect << 1, 0, 0, 0, 0, 1;
  CHECK(episode_loss(perfect, {0, 2}) == 0.0);

  Mat<double> half = Mat<double>::Constant(4, 5, 0.5);
  CHECK(episode_loss(half, {0, 1, 2, 3}) == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(5);
  Mat<double> scores = random_mat<double>(rng, 6, 4).array().tanh() * 0.49 + 0.5;
  std::vector<int> labels = {0, 1, 2, 3, 0, 1};
  double naive = 0;
  for (int q = 0; q < 6; ++q)
    for (int c = 0; c < 4; ++c) {
      const double t = labels[static_cast<std::size_t>(q)] == c ? 1.0 : 0.0;
      naive += (scores(q, c) - t) * (scores(q, c) - t);
    }
  naive /= 24.0;
  CHECK(std::abs(episode_loss(scores, labels) - naive) < 1e-7);
  CHECK(episode_loss(scores, labels) >= 0.0);

  CHECK_THROWS(episode_loss(scores, {0, 1, 2, 9, 0, 1}));
  CHECK_THROWS(episode_loss(scores, {0, 1}));

  // bce agrees with a direct evaluation
  double bce = 0;
  for (int q = 0; q < 6; ++q)
    for (int c = 0; c < 4; ++c) {
      const double t = labels[static_cast<std::size_t>(q)] == c ? 1.0 : 0.0;
      bce -= t * std::log(scores(q, c)) + (1 - t) * std::log(1 - scores(q, c));
    }
  bce /= 24.0;
  CHECK(episode_loss(scores, labels, LossKind::BCE) == doctest::Approx(bce).epsilon(1e-9));
}

TEST_CASE("predict: argmax, tie-break, monotone invariance") {
  Mat<float> row(1, 5);
  row << 0.1f, 0.9f, 0.3f, 0.2f, 0.1f;
  CHECK(predict(row) == std::vector<int>{1});

  Mat<float> ties = Mat<float>::Constant(1, 4, 0.25f);
  CHECK(predict(ties) == std::vector<int>{0});

  Rng rng(6);
  Mat<float> scores = random_mat<float>(rng, 8, 5);
  auto base = predict(scores);
  // strictly increasing per-row transforms preserve the argmax
  Mat<float> warped = scores;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const float a = 0.5f + static_cast<float>(rng.uniform());
    const float b = static_cast<float>(rng.normal());
    warped.row(i) = (scores.row(i).array() * a + b).exp();
  }
  CHECK(predict(warped) == base);

  Mat<float> empty(0, 0);
  CHECK_THROWS(predict(empty));
}

TEST_CASE("episode scores: shape, range, degenerate one-way") {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.dim = 6;
  cfg.head_hidden = 4;
  cfg.image_size = 16;
  cfg.ablation = Ablation::IG;
  MlsmModel<float> model(cfg, 11);

  Rng rng(7);
  EpisodeTensors<float> ep;
  ep.c_way = 5;
  ep.k_shot = 1;
  ep.support_images = random_tensor<float>(rng, 5, 16, 16, 3, 0.5);
  ep.query_images = random_tensor<float>(rng, 15, 16, 16, 3, 0.5);
  for (int q = 0; q < 15; ++q) ep.query_labels.push_back(q % 5);

  Mat<float> scores = model.score_episode(ep);
  CHECK(scores.rows() == 15);
  CHECK(scores.cols() == 5);
  CHECK(scores.minCoeff() > 0.0f);
  CHECK(scores.maxCoeff() < 1.0f);

  EpisodeTensors<float> one;
  one.c_way = 1;
  one.k_shot = 2;
  one.support_images = random_tensor<float>(rng, 2, 16, 16, 3, 0.5);
  one.query_images = random_tensor<float>(rng, 3, 16, 16, 3, 0.5);
  one.query_labels = {0, 0, 0};
  Mat<float> col = model.score_episode(one);
  CHECK(col.cols() == 1);
  CHECK(predict(col) == std::vector<int>{0, 0, 0});
}

TEST_CASE("episode scores match a hand-rolled composition of the operations") {
  ModelConfig cfg;
  cfg.channels = 6;
  cfg.dim = 5;
  cfg.head_hidden = 4;
  cfg.image_size = 16;
  cfg.ablation = Ablation::IGO;
  MlsmModel<double> model(cfg, 3);

  Rng rng(8);
  const int c_way = 3, k_shot = 2, n_query = 4;
  EpisodeTensors<double> ep;
  ep.c_way = c_way;
  ep.k_shot = k_shot;
  ep.support_images = random_tensor<double>(rng, c_way * k_shot, 16, 16, 3, 0.5);
  ep.support_crops = random_tensor<double>(rng, c_way * k_shot, 16, 16, 3, 0.5);
  ep.query_images = random_tensor<double>(rng, n_query, 16, 16, 3, 0.5);
  ep.query_crops = random_tensor<double>(rng, n_query, 16, 16, 3, 0.5);
  ep.query_labels = {0, 1, 2, 0};

  Mat<double> got = model.score_episode(ep);

  // Hand-rolled composition in eval mode: per-image encodes, gap, adjusters,
  // fusion, per-class averaging, relation head.
  auto fused_of = [&](const Tensor<double>& img, const Tensor<double>& crop) {
    return encode_all_levels(model.params.encoder, model.params.adj_image,
                             model.params.adj_object, model.params.adj_global, img, crop);
  };
  Mat<double> support_fused(c_way * k_shot, cfg.dim);
  for (int i = 0; i < c_way * k_shot; ++i)
    support_fused.row(i) =
        fused_of(slice_batch(ep.support_images, i, 1), slice_batch(ep.support_crops, i, 1)).row(0);
  Mat<double> want(n_query, c_way);
  for (int q = 0; q < n_query; ++q) {
    Vec<double> qf =
        fused_of(slice_batch(ep.query_images, q, 1), slice_batch(ep.query_crops, q, 1))
            .row(0)
            .transpose();
    for (int c = 0; c < c_way; ++c) {
      Vec<double> rep = average_support(Mat<double>(support_fused.middleRows(c * k_shot, k_shot)));
      want(q, c) = relation_score(model.params.head, rep, qf);
    }
  }
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("a single fixed episode can be overfit") {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.dim = 8;
  cfg.head_hidden = 8;
  cfg.image_size = 16;
  cfg.ablation = Ablation::IG;
  MlsmModel<float> model(cfg, 21);

  Rng rng(22);
  EpisodeTensors<float> ep;
  ep.c_way = 3;
  ep.k_shot = 1;
  ep.support_images = random_tensor<float>(rng, 3, 16, 16, 3, 0.6);
  ep.query_images = random_tensor<float>(rng, 6, 16, 16, 3, 0.6);
  ep.query_labels = {0, 1, 2, 0, 1, 2};

  nn::Adam<float> adam;
  adam.reset(model.param_refs());
  float loss = 1;
  for (int step = 0; step < 300; ++step) loss = model.train_step(ep, adam, 5e-3);
  CHECK(loss < 0.05f);
}

TEST_CASE("I-mode episode scoring composes pair concat with the relation module") {
  ModelConfig cfg;
  cfg.channels = 6;
  cfg.dim = 5;
  cfg.head_hidden = 4;
  cfg.image_size = 16;
  cfg.ablation = Ablation::I;
  MlsmModel<double> model(cfg, 9);

  Rng rng(10);
  EpisodeTensors<double> ep;
  ep.c_way = 2;
  ep.k_shot = 2;
  ep.support_images = random_tensor<double>(rng, 4, 16, 16, 3, 0.5);
  ep.query_images = random_tensor<double>(rng, 3, 16, 16, 3, 0.5);
  ep.query_labels = {0, 1, 0};

  Mat<double> got = model.score_episode(ep);
  CHECK(got.rows() == 3);
  CHECK(got.cols() == 2);

  // hand-rolled: encode each image, average support maps per class,
  // pair-concat, relation module, head on the single relation vector
  auto enc1 = [&](const Tensor<double>& t, int i) {
    return encode(model.params.encoder, slice_batch(t, i, 1));
  };
  for (int q = 0; q < 3; ++q) {
    Tensor<double> qm = enc1(ep.query_images, q);
    for (int c = 0; c < 2; ++c) {
      Tensor<double> rep = enc1(ep.support_images, c * 2);
      rep.data += enc1(ep.support_images, c * 2 + 1).data;
      rep.data /= 2.0;
      Tensor<double> pair = image_level_pair_concat(rep, qm);
      Mat<double> rel = adjust(model.params.pair_relation, pair);
      SimilarityHead<double>& head = model.params.head;
      Vec<double> score = head_forward(head, rel, nullptr);
      CHECK(got(q, c) == doctest::Approx(score(0)).epsilon(1e-10));
    }
  }
}
