#pragma once

#include "mlsm/nn.hpp"

#include <vector>

namespace mlsm {

/// Similarity function: two fully connected layers (hidden ReLU) with a
/// sigmoid output, so scores live strictly in (0, 1).
template <class S>
struct SimilarityHead {
  nn::Linear<S> fc1, fc2;

  void init(Rng& rng, int in, int hidden) {
    fc1.init(rng, in, hidden);
    fc2.init(rng, hidden, 1);
  }

  void zero_like(const SimilarityHead& p) {
    fc1.zero_like(p.fc1);
    fc2.zero_like(p.fc2);
  }

  void collect(std::vector<nn::ParamRef<S>>& refs, const std::string& prefix,
               SimilarityHead& grad) {
    register_param(refs, prefix + ".fc1.weight", fc1.weight, grad.fc1.weight);
    register_param(refs, prefix + ".fc1.bias", fc1.bias, grad.fc1.bias);
    register_param(refs, prefix + ".fc2.weight", fc2.weight, grad.fc2.weight);
    register_param(refs, prefix + ".fc2.bias", fc2.bias, grad.fc2.bias);
  }

  int in_features() const { return fc1.in_features(); }
};

template <class S>
struct HeadCache {
  Mat<S> input;   // N x in
  Mat<S> hidden;  // post-ReLU
  Vec<S> scores;  // sigmoid outputs, kept for the loss gradient
};

/// Scores for a batch of pairs, one row of `pairs` per (a, b) pair.
template <class S>
Vec<S> head_forward(SimilarityHead<S>& head, const Mat<S>& pairs,
                    std::type_identity_t<HeadCache<S>*> cache) {
  Mat<S> h = nn::linear_forward(head.fc1, pairs);
  h = h.cwiseMax(S(0));
  Mat<S> z = nn::linear_forward(head.fc2, h);
  Vec<S> scores = nn::sigmoid(Mat<S>(z)).col(0);
  if (cache) {
    cache->input = pairs;
    cache->hidden = std::move(h);
    cache->scores = scores;
  }
  return scores;
}

/// Backward from d(loss)/d(z), z being the pre-sigmoid output (loss gradients
/// fold the sigmoid in; see episode_loss_grad_z). Returns d(loss)/d(pairs).
template <class S>
Mat<S> head_backward(const SimilarityHead<S>& head, const HeadCache<S>& cache,
                     const Vec<S>& d_z, SimilarityHead<S>& grad) {
  Mat<S> dh = nn::linear_backward(head.fc2, cache.hidden, Mat<S>(d_z), grad.fc2);
  dh = ((cache.hidden.array() > S(0)).template cast<S>() * dh.array()).matrix();
  return nn::linear_backward(head.fc1, cache.input, dh, grad.fc1);
}

/// d(score)/dz helper for callers that differentiate through the sigmoid.
template <class S>
Vec<S> sigmoid_grad(const Vec<S>& scores, const Vec<S>& d_scores) {
  return (d_scores.array() * scores.array() * (S(1) - scores.array())).matrix();
}

/// Relation score for a single (support representation, query) pair.
/// Concatenation order is fixed: support class representation first.
template <class S>
S relation_score(const SimilarityHead<S>& head, const Vec<S>& support_rep,
                 const Vec<S>& query_rep) {
  require(support_rep.size() + query_rep.size() == head.in_features(),
          "relation_score: vector length mismatch");
  Mat<S> pair(1, support_rep.size() + query_rep.size());
  pair.row(0).head(support_rep.size()) = support_rep.transpose();
  pair.row(0).tail(query_rep.size()) = query_rep.transpose();
  return head_forward(const_cast<SimilarityHead<S>&>(head), pair, nullptr)(0);
}

/// K-shot class representation: arithmetic mean of the support vectors
/// (rows). K = 1 returns the single row unchanged.
template <class S>
Vec<S> average_support(const Mat<S>& vectors) {
  require(vectors.rows() >= 1, "average_support: empty support list");
  return vectors.colwise().mean().transpose();
}

/// Depth concatenation of two feature maps (Eq. channel order: a first).
template <class S>
Tensor<S> image_level_pair_concat(const Tensor<S>& map_a, const Tensor<S>& map_b) {
  return concat_channels(map_a, map_b);
}

enum class LossKind { MSE, BCE };

/// Episode loss between a score matrix (n_query x c_way) and one-hot targets.
/// MSE is the default; BCE is available behind the config flag.
template <class S>
S episode_loss(const Mat<S>& scores, const std::vector<int>& labels, LossKind kind = LossKind::MSE) {
  const Eigen::Index q = scores.rows(), c = scores.cols();
  require(static_cast<Eigen::Index>(labels.size()) == q, "episode_loss: label count mismatch");
  S total = 0;
  for (Eigen::Index i = 0; i < q; ++i) {
    require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < c,
            "episode_loss: label out of range");
    for (Eigen::Index j = 0; j < c; ++j) {
      const S t = labels[static_cast<std::size_t>(i)] == j ? S(1) : S(0);
      const S s = scores(i, j);
      if (kind == LossKind::MSE) {
        total += (s - t) * (s - t);
      } else {
        total -= t * std::log(std::max(s, S(1e-12))) +
                 (S(1) - t) * std::log(std::max(S(1) - s, S(1e-12)));
      }
    }
  }
  return total / static_cast<S>(q * c);
}

/// d(episode_loss)/d(pre-sigmoid z), flattened in row-major (q, c) order.
/// Folding the sigmoid in keeps BCE numerically clean.
template <class S>
Vec<S> episode_loss_grad_z(const Mat<S>& scores, const std::vector<int>& labels, LossKind kind) {
  const Eigen::Index q = scores.rows(), c = scores.cols();
  Vec<S> dz(q * c);
  const S inv_n = S(1) / static_cast<S>(q * c);
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      const S t = labels[static_cast<std::size_t>(i)] == j ? S(1) : S(0);
      const S s = scores(i, j);
      const S d = kind == LossKind::MSE ? S(2) * (s - t) * s * (S(1) - s) : (s - t);
      dz(i * c + j) = d * inv_n;
    }
  }
  return dz;
}

/// Per-row argmax with ties broken toward the lowest class index.
template <class S>
std::vector<int> predict(const Mat<S>& scores) {
  require(scores.rows() > 0 && scores.cols() > 0, "predict: empty score matrix");
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j)
      if (scores(i, j) > scores(i, best)) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace mlsm
