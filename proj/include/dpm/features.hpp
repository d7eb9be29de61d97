#pragma once

// Dense, upright local descriptors on a regular block grid.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "dpm/error.hpp"
#include "dpm/image.hpp"
#include "dpm/numerics.hpp"

namespace dpm {

enum class DescriptorKind { sift, hog };

inline constexpr std::size_t kSiftDim = 128;
inline constexpr std::size_t kHogDim = 36;

inline std::size_t descriptor_dim(DescriptorKind kind) {
  return kind == DescriptorKind::sift ? kSiftDim : kHogDim;
}

inline DescriptorKind parse_descriptor_kind(const std::string& s) {
  if (s == "sift") return DescriptorKind::sift;
  if (s == "hog") return DescriptorKind::hog;
  fail(ErrorKind::usage, "unknown descriptor '" + s + "' (expected sift or hog)");
}

struct GridSpec {
  int block = 20;
  int stride = 8;
  std::vector<double> scales{0.6, 1.0};
  DescriptorKind kind = DescriptorKind::sift;

  void validate(int width, int height) const {
    require(block >= 1 && block <= std::min(width, height),
            "GridSpec: block " + std::to_string(block) + " exceeds image " +
                std::to_string(width) + "x" + std::to_string(height));
    require(stride >= 1, "GridSpec: stride must be >= 1");
    require(!scales.empty(), "GridSpec: scales must be non-empty");
    for (double s : scales) require(s > 0.0, "GridSpec: scales must be > 0");
  }
};

struct GridOrigin {
  int x = 0;
  int y = 0;
  friend bool operator==(const GridOrigin&, const GridOrigin&) = default;
};

// Row-major: y outer, x inner.
inline std::vector<GridOrigin> dense_grid(int width, int height, const GridSpec& spec) {
  spec.validate(width, height);
  std::vector<GridOrigin> out;
  for (int y = 0; y <= height - spec.block; y += spec.stride)
    for (int x = 0; x <= width - spec.block; x += spec.stride) out.push_back({x, y});
  return out;
}

struct RawDescriptor {
  Point center;                // block origin + block/2, crop frame
  std::size_t scale_index = 0;
  std::vector<double> values;
  friend bool operator==(const RawDescriptor&, const RawDescriptor&) = default;
};

// Scale-major, then row-major by block origin.
struct DescriptorSet {
  std::string image_id;
  std::vector<RawDescriptor> descriptors;

  std::size_t size() const noexcept { return descriptors.size(); }
  const RawDescriptor& operator[](std::size_t i) const { return descriptors[i]; }
};

// Per-pixel gradient magnitude and orientation in [0, 2*pi), central
// differences with replicate border, y axis pointing down.
struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<double> magnitude;
  std::vector<double> angle;

  explicit GradientField(const Image& img)
      : width(img.width),
        height(img.height),
        magnitude(img.pixels.size()),
        angle(img.pixels.size()) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const auto [m, a] = at_pixel(img, x, y);
        magnitude[static_cast<std::size_t>(y) * width + x] = m;
        angle[static_cast<std::size_t>(y) * width + x] = a;
      }
  }

  static std::pair<double, double> at_pixel(const Image& img, int x, int y) {
    const double dx = 0.5 * (img.clamped(x + 1, y) - img.clamped(x - 1, y));
    const double dy = 0.5 * (img.clamped(x, y + 1) - img.clamped(x, y - 1));
    double a = std::atan2(dy, dx);
    if (a < 0.0) a += 2.0 * std::numbers::pi;
    if (a >= 2.0 * std::numbers::pi) a = 0.0;
    return {std::sqrt(dx * dx + dy * dy), a};
  }

  double mag(int x, int y) const { return magnitude[static_cast<std::size_t>(y) * width + x]; }
  double ang(int x, int y) const { return angle[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

inline void require_window(int width, int height, GridOrigin o, int block) {
  if (block < 1 || o.x < 0 || o.y < 0 || o.x + block > width || o.y + block > height)
    fail(ErrorKind::contract, "descriptor window (" + std::to_string(o.x) + "," +
                                  std::to_string(o.y) + ")+" + std::to_string(block) +
                                  " outside image");
}

// L2 normalize, clip at 0.2, renormalize; zero vector when the
// pre-normalization norm is below 1e-12.
inline void normalize_clip(std::vector<double>& h) {
  const double n = std::sqrt(squared_norm(h));
  if (n < 1e-12) {
    std::fill(h.begin(), h.end(), 0.0);
    return;
  }
  for (double& v : h) v = std::min(v / n, 0.2);
  const double n2 = std::sqrt(squared_norm(h));
  for (double& v : h) v /= n2;
}

template <typename Grad>
std::vector<double> sift_from_gradients(const Grad& grad, GridOrigin o, int block) {
  constexpr int kCells = 4, kBins = 8;
  std::vector<double> hist(kCells * kCells * kBins, 0.0);
  const double sigma = block / 2.0;
  const double c = (block - 1) / 2.0;
  const double bin_width = 2.0 * std::numbers::pi / kBins;
  for (int j = 0; j < block; ++j) {
    const int cy = j * kCells / block;
    for (int i = 0; i < block; ++i) {
      const int cx = i * kCells / block;
      const auto [m, a] = grad(o.x + i, o.y + j);
      if (m == 0.0) continue;
      const double w = m * std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2.0 * sigma * sigma));
      const double pos = a / bin_width;
      const double fl = std::floor(pos);
      const double frac = pos - fl;
      const int b0 = static_cast<int>(fl) % kBins;
      const int b1 = (b0 + 1) % kBins;
      double* cell = &hist[static_cast<std::size_t>((cy * kCells + cx) * kBins)];
      cell[b0] += w * (1.0 - frac);
      cell[b1] += w * frac;
    }
  }
  normalize_clip(hist);
  return hist;
}

template <typename Grad>
std::vector<double> hog_from_gradients(const Grad& grad, GridOrigin o, int block) {
  constexpr int kCells = 2, kBins = 9;
  std::vector<double> hist(kCells * kCells * kBins, 0.0);
  const double bin_width = std::numbers::pi / kBins;
  for (int j = 0; j < block; ++j) {
    const int cy = j * kCells / block;
    for (int i = 0; i < block; ++i) {
      const int cx = i * kCells / block;
      const auto [m, a] = grad(o.x + i, o.y + j);
      if (m == 0.0) continue;
      const double unsigned_angle = a >= std::numbers::pi ? a - std::numbers::pi : a;
      // bin k is centred on (k + 0.5) * bin_width
      const double pos = unsigned_angle / bin_width - 0.5;
      const double fl = std::floor(pos);
      const double frac = pos - fl;
      const int b0 = (static_cast<int>(fl) + kBins) % kBins;
      const int b1 = (b0 + 1) % kBins;
      double* cell = &hist[static_cast<std::size_t>((cy * kCells + cx) * kBins)];
      cell[b0] += m * (1.0 - frac);
      cell[b1] += m * frac;
    }
  }
  normalize_clip(hist);
  return hist;
}

}  // namespace detail

// 4x4 spatial cells x 8 orientation bins, Gaussian-weighted (sigma =
// block/2), orientation-only linear interpolation, clip 0.2.
inline std::vector<double> sift_descriptor(const Image& img, GridOrigin origin, int block) {
  detail::require_window(img.width, img.height, origin, block);
  return detail::sift_from_gradients(
      [&](int x, int y) { return GradientField::at_pixel(img, x, y); }, origin, block);
}

// 2x2 cells x 9 unsigned orientation bins, clip 0.2.
inline std::vector<double> hog_descriptor(const Image& img, GridOrigin origin, int block) {
  detail::require_window(img.width, img.height, origin, block);
  return detail::hog_from_gradients(
      [&](int x, int y) { return GradientField::at_pixel(img, x, y); }, origin, block);
}

inline DescriptorSet extract_dense(const Image& img, const GridSpec& spec, std::string image_id = {}) {
  const auto origins = dense_grid(img.width, img.height, spec);
  DescriptorSet out{std::move(image_id), {}};
  out.descriptors.reserve(origins.size() * spec.scales.size());
  for (std::size_t s = 0; s < spec.scales.size(); ++s) {
    const GradientField field(gaussian_smooth(img, spec.scales[s]));
    auto grad = [&](int x, int y) { return std::pair{field.mag(x, y), field.ang(x, y)}; };
    for (const GridOrigin& o : origins) {
      RawDescriptor d;
      d.center = {o.x + spec.block / 2.0, o.y + spec.block / 2.0};
      d.scale_index = s;
      d.values = spec.kind == DescriptorKind::sift ? detail::sift_from_gradients(grad, o, spec.block)
                                                   : detail::hog_from_gradients(grad, o, spec.block);
      out.descriptors.push_back(std::move(d));
    }
  }
  return out;
}

}  // namespace dpm
