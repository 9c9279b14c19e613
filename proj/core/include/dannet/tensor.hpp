#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dannet {

std::string shape_str(const std::vector<int>& shape);

/// Accumulation/gradient precision, one level above the value precision.
/// Reductions and gradient buffers live here so that the two adversarial
/// update routes agree to the last bit of the value precision.
template <typename Real>
struct AccumOf {
  using type = double;
};
template <>
struct AccumOf<double> {
  using type = long double;
};

template <typename Real>
using Accum = typename AccumOf<Real>::type;

/// Dense row-major tensor. Real is float (standard precision) or double
/// (high precision, used by the finite-difference and equivalence suites).
///
/// Layout conventions: 4-D is [batch, channels, height, width],
/// 2-D is [batch, features].
template <typename Real>
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<Real> d);

  static Tensor full(std::vector<int> s, Real v);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t numel() const;
  bool is_scalar() const { return numel() == 1; }

  Real& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  Real operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 4-D accessors; no bounds checks in release builds.
  Real& at4(int b, int c, int y, int x) {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  Real at4(int b, int c, int y, int x) const {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  Real& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  Real at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  void fill(Real v);
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  double l2_norm() const;
  double max_abs() const;
};

/// Flat binary tensor file: magic "DGT1", u32 rank, rank x u32 dims
/// (little-endian), then raw little-endian elements. The element width
/// (4 or 8 bytes) is recovered from the payload size on load.
template <typename Real>
void save_tensor(const Tensor<Real>& t, const std::string& path);

template <typename Real>
Tensor<Real> load_tensor(const std::string& path);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace dannet
