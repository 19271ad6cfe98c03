#include "apnt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <sstream>

#include "apnt/error.hpp"

namespace apnt {

namespace {
std::atomic<bool> g_warnings{true};

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InputError("negative tensor dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
}  // namespace

void log_warning(const std::string& message) {
  if (g_warnings.load()) std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(int channels, int height, int width, double fill)
    : Tensor(Shape{channels, height, width}, fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor slice_channels(const Tensor& t, int first, int count) {
  if (t.rank() != 3 || first < 0 || count < 0 || first + count > t.channels())
    throw StructuralError("channel slice out of range for " + shape_string(t.shape()));
  Tensor out(count, t.height(), t.width());
  std::copy_n(t.channel_data(first), count * t.plane(), out.data());
  return out;
}

Tensor crop(const Tensor& t, int y0, int x0, int height, int width) {
  if (t.rank() != 3 || y0 < 0 || x0 < 0 || height < 0 || width < 0 ||
      y0 + height > t.height() || x0 + width > t.width())
    throw InputError("crop window outside " + shape_string(t.shape()));
  Tensor out(t.channels(), height, width);
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < height; ++y)
      std::copy_n(t.channel_data(c) + static_cast<std::size_t>(y0 + y) * t.width() + x0, width,
                  out.channel_data(c) + static_cast<std::size_t>(y) * width);
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw StructuralError("concat of zero tensors");
  int channels = 0;
  for (const auto& p : parts) {
    if (p.rank() != 3 || p.height() != parts[0].height() || p.width() != parts[0].width())
      throw StructuralError("concat: spatial mismatch " + shape_string(p.shape()) + " vs " +
                            shape_string(parts[0].shape()));
    channels += p.channels();
  }
  Tensor out(channels, parts[0].height(), parts[0].width());
  double* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.data(), t.data() + t.size(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (!a.same_shape(b))
    throw StructuralError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                          " vs " + shape_string(b.shape()));
}

}  // namespace apnt
