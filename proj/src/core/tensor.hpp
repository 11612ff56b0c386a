#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace bevlab {

enum class Dtype : std::uint8_t { kF32 = 0, kF64 = 1 };

inline std::size_t dtype_size(Dtype d) {
  return d == Dtype::kF32 ? sizeof(float) : sizeof(double);
}

const char* dtype_name(Dtype d);

// Dense row-major array with shape metadata. Extents are positive; the
// flat buffer length always equals the product of the extents.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, Dtype dtype);

  static Tensor zeros(std::vector<std::size_t> shape, Dtype dtype = Dtype::kF32);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     Dtype dtype = Dtype::kF32);
  // normal(mean, stddev) entries from the named generator
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng,
                      double mean = 0.0, double stddev = 0.02,
                      Dtype dtype = Dtype::kF32);
  static Tensor identity(std::size_t n, Dtype dtype = Dtype::kF32);
  static Tensor from_values(std::vector<std::size_t> shape,
                            const std::vector<double>& values,
                            Dtype dtype = Dtype::kF32);

  bool empty() const { return numel_ == 0; }
  Dtype dtype() const { return dtype_; }
  std::size_t ndim() const { return shape_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return numel_; }

  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> data() const;

  // dtype-erased scalar access by flat index (convenience paths only)
  double get(std::size_t flat) const;
  void set(std::size_t flat, double value);

  std::size_t offset(std::span<const std::size_t> idx) const;

  Tensor astype(Dtype target) const;
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool bitwise_equal(const Tensor& other) const;

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::size_t numel_ = 0;
  Dtype dtype_ = Dtype::kF32;
  std::vector<float> f32_;
  std::vector<double> f64_;
};

// Calls fn with a value of the scalar type matching dt.
template <typename Fn>
decltype(auto) dispatch_dtype(Dtype dt, Fn&& fn) {
  if (dt == Dtype::kF32) return fn(float{});
  return fn(double{});
}

enum class Activation { kSilu, kElu, kEluPlusOne, kExp };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

template <typename T>
inline T silu(T x) {
  return static_cast<T>(x / (T(1) + std::exp(-x)));
}
template <typename T>
inline T elu(T x) {
  return x > T(0) ? x : static_cast<T>(std::expm1(x));
}
template <typename T>
inline T elu_plus_one(T x) {
  return x > T(0) ? x + T(1) : static_cast<T>(std::exp(x));
}

// c[i][j] = sum_k a[i][k] * b[k][j]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor activation(const Tensor& x, Activation kind);

// Cross-correlation with zero same-padding; kernel is [kh x kw x Cin x Cout],
// kh, kw in {1, 3}. Input [H x W x Cin] -> output [H x W x Cout].
Tensor conv2d(const Tensor& x, const Tensor& kernel);

// Output bin (i, j) averages rows [floor(i*h/S), ceil((i+1)*h/S)) and the
// analogous column range. Input [h x w x C] -> output [out_h x out_w x C].
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);

// Distributes output-bin gradients back over the averaged input regions.
Tensor adaptive_avg_pool_backward(const Tensor& grad_out, std::size_t in_h,
                                  std::size_t in_w);

// Binary tensor file format, little-endian throughout:
//   magic "BFLT0001" (8 bytes) | dtype code u8 (0=f32, 1=f64) | ndim u8 |
//   ndim x u64 dims | raw scalar payload.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace bevlab
