#ifndef ASNET_NN_TENSOR_HPP
#define ASNET_NN_TENSOR_HPP

#include <Eigen/Core>

#include <string>

#include <fmt/core.h>

namespace asnet::nn {

/// NCHW extent.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(n) * c * h * w; }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const { return fmt::format("({}, {}, {}, {})", n, c, h, w); }
};

/// Dense NCHW tensor, contiguous, templated on scalar.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ItemMap = Eigen::Map<RowMatrix>;
  using ConstItemMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Array::Zero(shape.size())) {}
  Tensor(const Shape& shape, Scalar fill) : shape_(shape), data_(Array::Constant(shape.size(), fill)) {}

  const Shape& shape() const { return shape_; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  Scalar operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  /// Batch item `n` viewed as a (channels x height*width) row-major matrix.
  ItemMap item(int n) { return ItemMap(data() + n * item_size(), shape_.c, shape_.plane()); }
  ConstItemMap item(int n) const { return ConstItemMap(data() + n * item_size(), shape_.c, shape_.plane()); }

  /// The tensor's data as a (rows x cols) row-major matrix; rows * cols must equal size().
  ItemMap matrix(Eigen::Index rows, Eigen::Index cols) { return ItemMap(data(), rows, cols); }
  ConstItemMap matrix(Eigen::Index rows, Eigen::Index cols) const { return ConstItemMap(data(), rows, cols); }

  void set_zero() { data_.setZero(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    out.array() = data_.template cast<Other>();
    return out;
  }

 private:
  Eigen::Index item_size() const { return static_cast<Eigen::Index>(shape_.c) * shape_.plane(); }
  Eigen::Index index(int n, int c, int h, int w) const {
    return ((static_cast<Eigen::Index>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  Shape shape_;
  Array data_;
};

}  // namespace asnet::nn

#endif  // ASNET_NN_TENSOR_HPP
