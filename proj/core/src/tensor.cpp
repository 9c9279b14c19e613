#include "dannet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "dannet/errors.hpp"

namespace dannet {

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

int64_t product(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

}  // namespace

template <typename Real>
Tensor<Real>::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(product(shape)), Real(0));
}

template <typename Real>
Tensor<Real>::Tensor(std::vector<int> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
  if (product(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(std::vector<int> s, Real v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

template <typename Real>
int64_t Tensor<Real>::numel() const {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

template <typename Real>
void Tensor<Real>::fill(Real v) {
  std::fill(data.begin(), data.end(), v);
}

template <typename Real>
bool Tensor<Real>::all_finite() const {
  for (Real v : data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename Real>
double Tensor<Real>::l2_norm() const {
  long double s = 0.0L;
  for (Real v : data) s += static_cast<long double>(v) * static_cast<long double>(v);
  return static_cast<double>(std::sqrt(static_cast<long double>(s)));
}

template <typename Real>
double Tensor<Real>::max_abs() const {
  double m = 0.0;
  for (Real v : data) m = std::max(m, std::fabs(static_cast<double>(v)));
  return m;
}

namespace {

constexpr char kMagic[4] = {'D', 'G', 'T', '1'};

void write_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

template <typename Real>
void save_tensor(const Tensor<Real>& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open tensor file for writing: " + path);
  out.write(kMagic, 4);
  write_u32(out, static_cast<uint32_t>(t.rank()));
  for (int d : t.shape) write_u32(out, static_cast<uint32_t>(d));
  // This codebase only targets little-endian hosts; elements go out raw.
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(Real)));
  if (!out) throw DataError("short write on tensor file: " + path);
}

template <typename Real>
Tensor<Real> load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open tensor file: " + path);
  const int64_t file_size = static_cast<int64_t>(in.tellg());
  in.seekg(0);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad tensor magic in " + path);
  const uint32_t rank = read_u32(in);
  if (rank > 8) throw DataError("unreasonable tensor rank in " + path);
  std::vector<int> shape(rank);
  int64_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(read_u32(in));
    n *= shape[i];
  }
  const int64_t payload = file_size - 8 - 4 * static_cast<int64_t>(rank);
  Tensor<Real> t(shape);
  if (payload == n * static_cast<int64_t>(sizeof(float))) {
    std::vector<float> raw(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(raw.data()), payload);
    for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = static_cast<Real>(raw[static_cast<size_t>(i)]);
  } else if (payload == n * static_cast<int64_t>(sizeof(double))) {
    std::vector<double> raw(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(raw.data()), payload);
    for (int64_t i = 0; i < n; ++i) t.data[static_cast<size_t>(i)] = static_cast<Real>(raw[static_cast<size_t>(i)]);
  } else {
    throw DataError("tensor payload size does not match shape " + shape_str(shape) + " in " + path);
  }
  if (!in) throw DataError("short read on tensor file: " + path);
  return t;
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct Tensor<long double>;
template void save_tensor<float>(const Tensor<float>&, const std::string&);
template void save_tensor<double>(const Tensor<double>&, const std::string&);
template Tensor<float> load_tensor<float>(const std::string&);
template Tensor<double> load_tensor<double>(const std::string&);

}  // namespace dannet
