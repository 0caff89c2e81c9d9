#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace mlsm {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using VecF = Vec<float>;
using MatD = Mat<double>;
using VecD = Vec<double>;

inline void require(bool cond, const std::string& message) {
  if (!cond) throw std::runtime_error(message);
}

/// Stack of C-channel feature maps for a batch of images.
/// Row (b*height + y)*width + x holds pixel (x, y) of image b; one column per
/// channel, so per-channel reductions and im2col GEMMs stay column-contiguous.
template <class Scalar>
struct Tensor {
  int batch = 0;
  int height = 0;
  int width = 0;
  Mat<Scalar> data;

  Tensor() = default;
  Tensor(int b, int h, int w, int channels)
      : batch(b), height(h), width(w),
        data(Mat<Scalar>::Zero(static_cast<Eigen::Index>(b) * h * w, channels)) {}

  int channels() const { return static_cast<int>(data.cols()); }
  int spatial() const { return height * width; }
  Eigen::Index rows() const { return data.rows(); }
  bool empty() const { return data.size() == 0; }

  auto image(int b) { return data.middleRows(static_cast<Eigen::Index>(b) * spatial(), spatial()); }
  auto image(int b) const {
    return data.middleRows(static_cast<Eigen::Index>(b) * spatial(), spatial());
  }

  Scalar at(int b, int c, int y, int x) const {
    return data((static_cast<Eigen::Index>(b) * height + y) * width + x, c);
  }
  Scalar& at(int b, int c, int y, int x) {
    return data((static_cast<Eigen::Index>(b) * height + y) * width + x, c);
  }

  bool same_shape(const Tensor& o) const {
    return batch == o.batch && height == o.height && width == o.width &&
           channels() == o.channels();
  }

  template <class S2>
  Tensor<S2> cast() const {
    Tensor<S2> out;
    out.batch = batch;
    out.height = height;
    out.width = width;
    out.data = data.template cast<S2>();
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Depth concatenation: channels of `a` first, then channels of `b`.
template <class Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require(a.batch == b.batch && a.height == b.height && a.width == b.width,
          "concat_channels: spatial/batch shape mismatch");
  Tensor<Scalar> out(a.batch, a.height, a.width, a.channels() + b.channels());
  out.data.leftCols(a.channels()) = a.data;
  out.data.rightCols(b.channels()) = b.data;
  return out;
}

template <class Scalar>
Tensor<Scalar> concat_batch(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.batch == 0) return b;
  if (b.batch == 0) return a;
  require(a.height == b.height && a.width == b.width && a.channels() == b.channels(),
          "concat_batch: per-image shape mismatch");
  Tensor<Scalar> out(a.batch + b.batch, a.height, a.width, a.channels());
  out.data.topRows(a.rows()) = a.data;
  out.data.bottomRows(b.rows()) = b.data;
  return out;
}

template <class Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& t, int first, int count) {
  require(first >= 0 && count >= 0 && first + count <= t.batch,
          "slice_batch: range out of bounds");
  Tensor<Scalar> out(count, t.height, t.width, t.channels());
  out.data = t.data.middleRows(static_cast<Eigen::Index>(first) * t.spatial(),
                               static_cast<Eigen::Index>(count) * t.spatial());
  return out;
}

}  // namespace mlsm
