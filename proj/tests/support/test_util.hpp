#pragma once

#include "mlsm/nn.hpp"

#include <functional>
#include <vector>

namespace mlsm::testutil {

/// Central finite differences of a scalar loss with respect to every entry of
/// every registered parameter. The loss functor re-runs the forward pass.
template <class S>
std::vector<Vec<S>> numeric_grads(std::vector<nn::ParamRef<S>>& refs,
                                  const std::function<S()>& loss, S h) {
  std::vector<Vec<S>> out;
  for (auto& r : refs) {
    if (!r.trainable) {  // buffers (running stats) carry no gradient
      out.push_back(Vec<S>());
      continue;
    }
    Vec<S> g(r.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      const S saved = r.value[i];
      r.value[i] = saved + h;
      const S up = loss();
      r.value[i] = saved - h;
      const S down = loss();
      r.value[i] = saved;
      g(i) = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

template <class S>
std::vector<Vec<S>> analytic_grads(const std::vector<nn::ParamRef<S>>& refs) {
  std::vector<Vec<S>> out;
  for (const auto& r : refs) {
    if (!r.trainable) {
      out.push_back(Vec<S>());
      continue;
    }
    out.push_back(Eigen::Map<const Vec<S>>(r.grad, r.size()));
  }
  return out;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <class S>
S max_rel_err(const std::vector<Vec<S>>& a, const std::vector<Vec<S>>& b, S floor) {
  S worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (Eigen::Index j = 0; j < a[i].size(); ++j) {
      const S denom = std::max({std::abs(a[i](j)), std::abs(b[i](j)), floor});
      worst = std::max(worst, std::abs(a[i](j) - b[i](j)) / denom);
    }
  }
  return worst;
}

template <class S>
Tensor<S> random_tensor(Rng& rng, int batch, int height, int width, int channels, double scale = 1.0) {
  Tensor<S> t(batch, height, width, channels);
  for (Eigen::Index i = 0; i < t.data.size(); ++i)
    t.data.data()[i] = static_cast<S>(rng.normal() * scale);
  return t;
}

template <class S>
Mat<S> random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<S>(rng.normal() * scale);
  return m;
}

}  // namespace mlsm::testutil
