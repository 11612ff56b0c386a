#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace bevlab {

namespace {

constexpr char kMagic[8] = {'B', 'F', 'L', 'T', '0', '0', '0', '1'};
constexpr std::size_t kMaxRank = 255;

std::size_t checked_numel(const std::vector<std::size_t>& shape) {
  if (shape.empty()) {
    fail(Status::kDimensionMismatch, "tensor shape must have at least one extent");
  }
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) {
      fail(Status::kDimensionMismatch, "tensor extents must be positive");
    }
    if (n > std::numeric_limits<std::size_t>::max() / e) {
      fail(Status::kDimensionMismatch, "tensor extent product overflows");
    }
    n *= e;
  }
  return n;
}

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t read_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

const char* dtype_name(Dtype d) { return d == Dtype::kF32 ? "f32" : "f64"; }

Tensor::Tensor(std::vector<std::size_t> shape, Dtype dtype)
    : shape_(std::move(shape)), numel_(checked_numel(shape_)), dtype_(dtype) {
  if (dtype_ == Dtype::kF32) {
    f32_.assign(numel_, 0.0f);
  } else {
    f64_.assign(numel_, 0.0);
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, Dtype dtype) {
  return Tensor(std::move(shape), dtype);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, Dtype dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double mean,
                     double stddev, Dtype dtype) {
  Tensor t(std::move(shape), dtype);
  dispatch_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.data<T>()) v = static_cast<T>(rng.normal(mean, stddev));
  });
  return t;
}

Tensor Tensor::identity(std::size_t n, Dtype dtype) {
  Tensor t({n, n}, dtype);
  for (std::size_t i = 0; i < n; ++i) t.set(i * n + i, 1.0);
  return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> shape,
                           const std::vector<double>& values, Dtype dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel()) {
    fail(Status::kDimensionMismatch, "value count does not match shape");
  }
  for (std::size_t i = 0; i < values.size(); ++i) t.set(i, values[i]);
  return t;
}

template <typename T>
std::span<T> Tensor::data() {
  if constexpr (std::is_same_v<T, float>) {
    if (dtype_ != Dtype::kF32) fail(Status::kInternal, "dtype is not f32");
    return {f32_.data(), f32_.size()};
  } else {
    if (dtype_ != Dtype::kF64) fail(Status::kInternal, "dtype is not f64");
    return {f64_.data(), f64_.size()};
  }
}

template <typename T>
std::span<const T> Tensor::data() const {
  if constexpr (std::is_same_v<T, float>) {
    if (dtype_ != Dtype::kF32) fail(Status::kInternal, "dtype is not f32");
    return {f32_.data(), f32_.size()};
  } else {
    if (dtype_ != Dtype::kF64) fail(Status::kInternal, "dtype is not f64");
    return {f64_.data(), f64_.size()};
  }
}

template std::span<float> Tensor::data<float>();
template std::span<double> Tensor::data<double>();
template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;

double Tensor::get(std::size_t flat) const {
  if (flat >= numel_) fail(Status::kBoundsError, "flat index out of range");
  return dtype_ == Dtype::kF32 ? static_cast<double>(f32_[flat]) : f64_[flat];
}

void Tensor::set(std::size_t flat, double value) {
  if (flat >= numel_) fail(Status::kBoundsError, "flat index out of range");
  if (dtype_ == Dtype::kF32) {
    f32_[flat] = static_cast<float>(value);
  } else {
    f64_[flat] = value;
  }
}

std::size_t Tensor::offset(std::span<const std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    fail(Status::kDimensionMismatch, "index rank does not match tensor rank");
  }
  std::size_t flat = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= shape_[k]) fail(Status::kBoundsError, "index out of range");
    flat = flat * shape_[k] + idx[k];
  }
  return flat;
}

Tensor Tensor::astype(Dtype target) const {
  if (target == dtype_) return *this;
  Tensor out(shape_, target);
  for (std::size_t i = 0; i < numel_; ++i) out.set(i, get(i));
  return out;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  const std::size_t n = checked_numel(shape);
  if (n != numel_) {
    fail(Status::kDimensionMismatch, "reshape changes element count");
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (dtype_ != other.dtype_ || shape_ != other.shape_) return false;
  if (dtype_ == Dtype::kF32) {
    return std::memcmp(f32_.data(), other.f32_.data(), numel_ * sizeof(float)) == 0;
  }
  return std::memcmp(f64_.data(), other.f64_.data(), numel_ * sizeof(double)) == 0;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

Activation activation_from_name(const std::string& name) {
  if (name == "silu") return Activation::kSilu;
  if (name == "elu") return Activation::kElu;
  if (name == "elu_plus_one") return Activation::kEluPlusOne;
  if (name == "exp") return Activation::kExp;
  fail(Status::kConfigError, "unknown activation: " + name);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kSilu: return "silu";
    case Activation::kElu: return "elu";
    case Activation::kEluPlusOne: return "elu_plus_one";
    case Activation::kExp: return "exp";
  }
  return "?";
}

namespace {

template <typename T>
void matmul_kernel(std::span<const T> a, std::span<const T> b, std::span<T> c,
                   std::size_t m, std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * p;
    std::fill(crow, crow + p, T(0));
    for (std::size_t l = 0; l < k; ++l) {
      const T av = a[i * k + l];
      const T* brow = b.data() + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void conv2d_kernel(std::span<const T> x, std::span<const T> w, std::span<T> out,
                   std::size_t h, std::size_t wd, std::size_t cin,
                   std::size_t kh, std::size_t kw, std::size_t cout) {
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh) / 2;
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw) / 2;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < wd; ++c) {
      T* o = out.data() + (r * wd + c) * cout;
      std::fill(o, o + cout, T(0));
      for (std::size_t dr = 0; dr < kh; ++dr) {
        const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r + dr) - ph;
        if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dc = 0; dc < kw; ++dc) {
          const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c + dc) - pw;
          if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(wd)) continue;
          const T* xp = x.data() + (static_cast<std::size_t>(rr) * wd +
                                    static_cast<std::size_t>(cc)) * cin;
          const T* wp = w.data() + (dr * kw + dc) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T xv = xp[ci];
            const T* wrow = wp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += xv * wrow[co];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    fail(Status::kDimensionMismatch, "matmul expects rank-2 tensors");
  }
  if (a.dtype() != b.dtype()) {
    fail(Status::kDimensionMismatch, "matmul dtype mismatch");
  }
  const std::size_t m = a.extent(0), k = a.extent(1), p = b.extent(1);
  if (b.extent(0) != k) {
    fail(Status::kDimensionMismatch,
         "matmul inner dims disagree: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out({m, p}, a.dtype());
  dispatch_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    matmul_kernel<T>(a.data<T>(), b.data<T>(), out.data<T>(), m, k, p);
  });
  return out;
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out(x.shape(), x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = x.data<T>();
    auto dst = out.data<T>();
    switch (kind) {
      case Activation::kSilu:
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = silu(src[i]);
        break;
      case Activation::kElu:
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = elu(src[i]);
        break;
      case Activation::kEluPlusOne:
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = elu_plus_one(src[i]);
        break;
      case Activation::kExp:
        for (std::size_t i = 0; i < src.size(); ++i)
          dst[i] = static_cast<T>(std::exp(src[i]));
        break;
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel) {
  if (x.ndim() != 3 || kernel.ndim() != 4) {
    fail(Status::kDimensionMismatch, "conv2d expects [HxWxC] input and [khxkwxCinxCout] kernel");
  }
  if (x.dtype() != kernel.dtype()) {
    fail(Status::kDimensionMismatch, "conv2d dtype mismatch");
  }
  const std::size_t kh = kernel.extent(0), kw = kernel.extent(1);
  if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3)) {
    fail(Status::kDimensionMismatch, "conv2d kernel extents must be 1 or 3");
  }
  if (kernel.extent(2) != x.extent(2)) {
    fail(Status::kDimensionMismatch,
         "conv2d channel mismatch: input " + x.shape_str() + " kernel " + kernel.shape_str());
  }
  const std::size_t cout = kernel.extent(3);
  Tensor out({x.extent(0), x.extent(1), cout}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    conv2d_kernel<T>(x.data<T>(), kernel.data<T>(), out.data<T>(), x.extent(0),
                     x.extent(1), x.extent(2), kh, kw, cout);
  });
  return out;
}

namespace {

struct PoolBin {
  std::size_t lo, hi;  // [lo, hi)
};

PoolBin pool_bin(std::size_t i, std::size_t in, std::size_t out) {
  return {(i * in) / out, ((i + 1) * in + out - 1) / out};
}

}  // namespace

Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.ndim() != 3) {
    fail(Status::kDimensionMismatch, "adaptive_avg_pool expects [h x w x C]");
  }
  if (out_h == 0 || out_w == 0) {
    fail(Status::kDimensionMismatch, "pool output extents must be positive");
  }
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  Tensor out({out_h, out_w, c}, x.dtype());
  dispatch_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::size_t i = 0; i < out_h; ++i) {
      const PoolBin rb = pool_bin(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const PoolBin cb = pool_bin(j, w, out_w);
        T* o = dst.data() + (i * out_w + j) * c;
        std::fill(o, o + c, T(0));
        for (std::size_t r = rb.lo; r < rb.hi; ++r) {
          for (std::size_t cc = cb.lo; cc < cb.hi; ++cc) {
            const T* p = src.data() + (r * w + cc) * c;
            for (std::size_t ch = 0; ch < c; ++ch) o[ch] += p[ch];
          }
        }
        const T inv = T(1) / static_cast<T>((rb.hi - rb.lo) * (cb.hi - cb.lo));
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] *= inv;
      }
    }
  });
  return out;
}

Tensor adaptive_avg_pool_backward(const Tensor& grad_out, std::size_t in_h,
                                  std::size_t in_w) {
  if (grad_out.ndim() != 3) {
    fail(Status::kDimensionMismatch, "pool gradient expects [S x S x C]");
  }
  const std::size_t out_h = grad_out.extent(0), out_w = grad_out.extent(1),
                    c = grad_out.extent(2);
  Tensor grad_in({in_h, in_w, c}, grad_out.dtype());
  dispatch_dtype(grad_out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto g = grad_out.data<T>();
    auto gi = grad_in.data<T>();
    for (std::size_t i = 0; i < out_h; ++i) {
      const PoolBin rb = pool_bin(i, in_h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const PoolBin cb = pool_bin(j, in_w, out_w);
        const T inv = T(1) / static_cast<T>((rb.hi - rb.lo) * (cb.hi - cb.lo));
        const T* go = g.data() + (i * out_w + j) * c;
        for (std::size_t r = rb.lo; r < rb.hi; ++r) {
          for (std::size_t cc = cb.lo; cc < cb.hi; ++cc) {
            T* p = gi.data() + (r * in_w + cc) * c;
            for (std::size_t ch = 0; ch < c; ++ch) p[ch] += go[ch] * inv;
          }
        }
      }
    }
  });
  return grad_in;
}

void save_tensor(const std::string& path, const Tensor& t) {
  if (t.ndim() > kMaxRank) fail(Status::kFormatError, "rank exceeds format limit");
  std::string buf;
  buf.reserve(10 + 8 * t.ndim() + t.numel() * dtype_size(t.dtype()));
  buf.append(kMagic, sizeof(kMagic));
  buf.push_back(static_cast<char>(t.dtype() == Dtype::kF32 ? 0 : 1));
  buf.push_back(static_cast<char>(t.ndim()));
  for (std::size_t e : t.shape()) append_u64_le(buf, e);
  if (t.dtype() == Dtype::kF32) {
    for (float v : t.data<float>()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  } else {
    for (double v : t.data<double>()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      append_u64_le(buf, bits);
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(Status::kIoError, "cannot open for write: " + path);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) fail(Status::kIoError, "write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(Status::kIoError, "cannot open for read: " + path);
  std::string buf((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 10) fail(Status::kFormatError, "file too short for header");
  if (std::memcmp(p, kMagic, sizeof(kMagic)) != 0) {
    fail(Status::kFormatError, "bad magic in " + path);
  }
  const unsigned dtype_code = p[8];
  if (dtype_code >= 2) fail(Status::kFormatError, "unknown dtype code");
  const Dtype dt = dtype_code == 0 ? Dtype::kF32 : Dtype::kF64;
  const std::size_t ndim = p[9];
  if (ndim == 0) fail(Status::kFormatError, "rank must be at least 1");
  const std::size_t header = 10 + 8 * ndim;
  if (buf.size() < header) fail(Status::kFormatError, "truncated dims");
  std::vector<std::size_t> shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t e = read_u64_le(p + 10 + 8 * i);
    if (e == 0) fail(Status::kFormatError, "zero extent in header");
    shape[i] = static_cast<std::size_t>(e);
  }
  Tensor t(shape, dt);
  const std::size_t payload = t.numel() * dtype_size(dt);
  if (buf.size() != header + payload) {
    fail(Status::kFormatError, "payload size mismatch in " + path);
  }
  const unsigned char* q = p + header;
  if (dt == Dtype::kF32) {
    auto dst = t.data<float>();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const std::uint32_t bits = read_u32_le(q + 4 * i);
      std::memcpy(&dst[i], &bits, 4);
    }
  } else {
    auto dst = t.data<double>();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const std::uint64_t bits = read_u64_le(q + 8 * i);
      std::memcpy(&dst[i], &bits, 8);
    }
  }
  return t;
}

const char* status_name(Status s) {
  switch (s) {
    case Status::kOk: return "ok";
    case Status::kDimensionMismatch: return "dimension-mismatch";
    case Status::kFormatError: return "format-error";
    case Status::kIoError: return "io-error";
    case Status::kValidationError: return "validation-error";
    case Status::kOutOfExtent: return "out-of-extent";
    case Status::kBoundsError: return "bounds-error";
    case Status::kDegenerateEmbedding: return "degenerate-embedding";
    case Status::kInsufficientNegatives: return "insufficient-negatives";
    case Status::kEmptyInstance: return "empty-instance";
    case Status::kEmptyBank: return "empty-bank";
    case Status::kPlacementError: return "placement-error";
    case Status::kResourceGuard: return "resource-guard";
    case Status::kDiverged: return "diverged";
    case Status::kConfigError: return "config-error";
    case Status::kGradCheckFailed: return "gradcheck-failed";
    case Status::kInternal: return "internal-error";
  }
  return "unknown";
}

}  // namespace bevlab
