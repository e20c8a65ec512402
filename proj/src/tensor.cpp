// SPDX-License-Identifier: Apache-2.0
#include "cstr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

namespace cstr {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kValue: return "value error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kConfig: return "config error";
  }
  return "error";
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) fail(ErrorKind::kShape, "tensor rank must be at least 1");
  for (auto e : shape) {
    if (e == 0) fail(ErrorKind::kShape, "zero extent in shape " + shape_to_string(shape));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    fail(ErrorKind::kShape, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_to_string(t.shape()));
  }
}

// View [h x w] as [1 x h x w] for the image kernels.
Tensor as_chw(const Tensor& t, const char* op) {
  if (t.rank() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  require_rank(t, 3, op);
  return t;
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_volume(shape_)) {
    fail(ErrorKind::kShape, "data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::from_external(Shape shape, std::vector<float> data) {
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite()) fail(ErrorKind::kValue, "non-finite value in external tensor data");
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    fail(ErrorKind::kShape, "axis " + std::to_string(axis) + " out of range for " +
                                shape_to_string(shape_));
  }
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool bit_identical(const Tensor& a, const Tensor& b) noexcept {
  return a.shape() == b.shape() &&
         (a.size() == 0 ||
          std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0);
}

std::uint64_t fingerprint(const Tensor& t) noexcept {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (auto e : t.shape()) {
    const std::uint64_t v = e;
    mix(&v, sizeof v);
  }
  if (t.size()) mix(t.data().data(), t.size() * sizeof(float));
  return h;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Tensor seeded_normal(Rng& rng, const Shape& shape, float stddev) {
  if (!(stddev >= 0.0f) || !std::isfinite(stddev)) {
    fail(ErrorKind::kValue, "seeded_normal: stddev must be finite and nonnegative");
  }
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

Tensor seeded_uniform(Rng& rng, const Shape& shape, float lo, float hi) {
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, "add: " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data()) v = 1.0f / (1.0f + std::exp(-v));
  return out;
}

Tensor transpose2d(const Tensor& a) {
  require_rank(a, 2, "transpose2d");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor transpose_hw(const Tensor& a) {
  require_rank(a, 3, "transpose_hw");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor out({c, w, h});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(k, x, y) = a.at(k, y, x);
  return out;
}

Tensor concat_channels(std::initializer_list<const Tensor*> parts) {
  if (parts.size() == 0) fail(ErrorKind::kShape, "concat_channels: no operands");
  const Tensor& first = **parts.begin();
  require_rank(first, 3, "concat_channels");
  std::size_t channels = 0;
  for (const Tensor* p : parts) {
    require_rank(*p, 3, "concat_channels");
    if (p->dim(1) != first.dim(1) || p->dim(2) != first.dim(2)) {
      fail(ErrorKind::kShape, "concat_channels: spatial extents differ: " +
                                  shape_to_string(first.shape()) + " vs " +
                                  shape_to_string(p->shape()));
    }
    channels += p->dim(0);
  }
  std::vector<float> data;
  data.reserve(channels * first.dim(1) * first.dim(2));
  for (const Tensor* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
  return Tensor({channels, first.dim(1), first.dim(2)}, std::move(data));
}

Tensor normalize_channels(const Tensor& a, float eps) {
  require_rank(a, 3, "normalize_channels");
  const std::size_t c = a.dim(0), plane = a.dim(1) * a.dim(2);
  Tensor out(a.shape());
  for (std::size_t p = 0; p < plane; ++p) {
    float mean = 0.0f;
    for (std::size_t k = 0; k < c; ++k) mean += a[k * plane + p];
    mean /= static_cast<float>(c);
    float var = 0.0f;
    for (std::size_t k = 0; k < c; ++k) {
      const float d = a[k * plane + p] - mean;
      var += d * d;
    }
    var /= static_cast<float>(c);
    const float inv = 1.0f / std::sqrt(var + eps);
    for (std::size_t k = 0; k < c; ++k) out[k * plane + p] = (a[k * plane + p] - mean) * inv;
  }
  return out;
}

Tensor softmax_axis(const Tensor& t, std::size_t axis) {
  if (axis >= t.rank()) {
    fail(ErrorKind::kShape, "softmax_axis: axis " + std::to_string(axis) +
                                " out of range for " + shape_to_string(t.shape()));
  }
  const std::size_t n = t.dim(axis);
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < t.rank(); ++a) inner *= t.dim(a);
  const std::size_t outer = t.size() / (n * inner);

  Tensor out(t.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      float peak = -std::numeric_limits<float>::infinity();
      for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, t[base + i * inner]);
      if (!std::isfinite(peak)) {
        fail(ErrorKind::kValue, "softmax_axis: slice has no finite entry");
      }
      float sum = 0.0f;
      for (std::size_t i = 0; i < n; ++i) {
        const float e = std::exp(t[base + i * inner] - peak);
        out[base + i * inner] = e;
        sum += e;
      }
      const float inv = 1.0f / sum;
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] *= inv;
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::kShape, "matmul: inner extents differ: " + shape_to_string(a.shape()) +
                                " x " + shape_to_string(b.shape()));
  }
  Tensor out({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  // i-p-j order: each out[i][j] accumulates over p in increasing order.
  for (std::size_t i = 0; i < m; ++i) {
    float* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float s = pa[i * k + p];
      const float* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t stride) {
  require_rank(input, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    fail(ErrorKind::kShape, "conv2d: kernel extents must be odd, got " +
                                shape_to_string(kernel.shape()));
  }
  if (kernel.dim(1) != c_in) {
    fail(ErrorKind::kShape, "conv2d: kernel " + shape_to_string(kernel.shape()) +
                                " expects " + std::to_string(kernel.dim(1)) +
                                " input channels, input is " + shape_to_string(input.shape()));
  }
  if (bias.dim(0) != c_out) {
    fail(ErrorKind::kShape, "conv2d: bias " + shape_to_string(bias.shape()) +
                                " does not match " + std::to_string(c_out) + " output channels");
  }
  if (stride == 0) fail(ErrorKind::kValue, "conv2d: stride must be positive");

  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor out({c_out, oh, ow});
  for (std::size_t o = 0; o < c_out; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        float acc = bias[o];
        for (std::size_t i = 0; i < c_in; ++i) {
          for (std::size_t u = 0; u < kh; ++u) {
            const long sy = static_cast<long>(y * stride + u) - ph;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            for (std::size_t v = 0; v < kw; ++v) {
              const long sx = static_cast<long>(x * stride + v) - pw;
              if (sx < 0 || sx >= static_cast<long>(w)) continue;
              acc += kernel[((o * c_in + i) * kh + u) * kw + v] *
                     input.at(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

Tensor avgpool_width(const Tensor& t, std::size_t factor) {
  if (factor == 0) fail(ErrorKind::kValue, "avgpool_width: factor must be positive");
  const bool flat = t.rank() == 2;
  const Tensor in = as_chw(t, "avgpool_width");
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t ow = (w + factor - 1) / factor;
  Tensor out({c, h, ow});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t lo = x * factor, hi = std::min(w, lo + factor);
        float sum = 0.0f;
        for (std::size_t s = lo; s < hi; ++s) sum += in.at(k, y, s);
        out.at(k, y, x) = sum / static_cast<float>(hi - lo);
      }
    }
  }
  return flat ? out.reshaped({h, ow}) : out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  float frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[d] = {lo, hi, static_cast<float>(src - static_cast<double>(lo))};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& t, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) fail(ErrorKind::kValue, "bilinear_upsample: zero target extent");
  const bool flat = t.rank() == 2;
  const Tensor in = as_chw(t, "bilinear_upsample");
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (out_h < h || out_w < w) {
    fail(ErrorKind::kValue, "bilinear_upsample: target " + std::to_string(out_h) + "x" +
                                std::to_string(out_w) + " smaller than source " +
                                shape_to_string(t.shape()));
  }
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Tensor out({c, out_h, out_w});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const float top = in.at(k, a.lo, b.lo) + b.frac * (in.at(k, a.lo, b.hi) - in.at(k, a.lo, b.lo));
        const float bot = in.at(k, a.hi, b.lo) + b.frac * (in.at(k, a.hi, b.hi) - in.at(k, a.hi, b.lo));
        out.at(k, y, x) = top + a.frac * (bot - top);
      }
    }
  }
  return flat ? out.reshaped({out_h, out_w}) : out;
}

float linear_interp_1d(std::span<const float> values, double x) {
  const std::size_t n = values.size();
  if (n == 0) fail(ErrorKind::kValue, "linear_interp_1d: empty values");
  if (!(x >= 0.0) || x > static_cast<double>(n - 1)) {
    fail(ErrorKind::kValue, "linear_interp_1d: position " + std::to_string(x) +
                                " outside [0, " + std::to_string(n - 1) + "]");
  }
  const auto lo = static_cast<std::size_t>(std::floor(x));
  const double frac = x - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return static_cast<float>((1.0 - frac) * values[lo] + frac * values[lo + 1]);
}

float linear_interp_1d(const Tensor& values, double x) {
  require_rank(values, 1, "linear_interp_1d");
  return linear_interp_1d(values.data(), x);
}

Tensor pad_to_multiple(const Tensor& t, std::size_t multiple) {
  if (multiple == 0) fail(ErrorKind::kValue, "pad_to_multiple: multiple must be positive");
  const bool flat = t.rank() == 2;
  const Tensor in = as_chw(t, "pad_to_multiple");
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t ph = (h + multiple - 1) / multiple * multiple;
  const std::size_t pw = (w + multiple - 1) / multiple * multiple;
  Tensor out({c, ph, pw});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        out.at(k, y, x) = in.at(k, std::min(y, h - 1), std::min(x, w - 1));
  return flat ? out.reshaped({ph, pw}) : out;
}

Tensor crop(const Tensor& t, std::size_t out_h, std::size_t out_w) {
  const bool flat = t.rank() == 2;
  const Tensor in = as_chw(t, "crop");
  const std::size_t c = in.dim(0);
  if (out_h == 0 || out_w == 0 || out_h > in.dim(1) || out_w > in.dim(2)) {
    fail(ErrorKind::kShape, "crop: " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                " does not fit in " + shape_to_string(t.shape()));
  }
  Tensor out({c, out_h, out_w});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) out.at(k, y, x) = in.at(k, y, x);
  return flat ? out.reshaped({out_h, out_w}) : out;
}

}  // namespace cstr
