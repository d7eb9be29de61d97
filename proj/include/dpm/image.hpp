#pragma once

// Grayscale rasters, landmark alignment and the illumination-normalization
// chain applied before descriptor extraction.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "dpm/error.hpp"

namespace dpm {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
    require(w >= 1 && h >= 1, "Image: dimensions must be >= 1");
  }

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  // Replicate-border access.
  double clamped(int x, int y) const {
    return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Landmarks {
  Point left_eye;
  Point right_eye;
  Point mouth;

  std::array<Point, 3> points() const { return {left_eye, right_eye, mouth}; }
};

enum class Modality { visible, thermal };

inline const char* to_string(Modality m) { return m == Modality::visible ? "visible" : "thermal"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "visible" || s == "vis" || s == "V") return Modality::visible;
  if (s == "thermal" || s == "thr" || s == "T") return Modality::thermal;
  fail(ErrorKind::format, "unknown modality '" + s + "'");
}

// ---------------------------------------------------------------- PGM I/O

enum class PgmErrorCode { missing_file, malformed, unsupported_format, unsupported_maxval };

class PgmError : public Error {
 public:
  PgmError(PgmErrorCode code, const std::string& what)
      : Error(code == PgmErrorCode::missing_file ? ErrorKind::io : ErrorKind::format, what),
        code_(code) {}
  PgmErrorCode code() const noexcept { return code_; }

 private:
  PgmErrorCode code_;
};

namespace detail {

// Reads one whitespace-delimited header token, skipping '#' comments.
inline bool pgm_token(const std::string& buf, std::size_t& pos, std::string& out) {
  out.clear();
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])) &&
         buf[pos] != '#')
    out.push_back(buf[pos++]);
  return !out.empty();
}

inline int pgm_int(const std::string& buf, std::size_t& pos, const std::string& path) {
  std::string tok;
  if (!pgm_token(buf, pos, tok) ||
      !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
      tok.size() > 9)
    throw PgmError(PgmErrorCode::malformed, path + ": malformed PGM header");
  return std::stoi(tok);
}

}  // namespace detail

inline Image decode_pgm(const std::string& buf, const std::string& name = "<buffer>") {
  std::size_t pos = 0;
  std::string magic;
  if (!detail::pgm_token(buf, pos, magic))
    throw PgmError(PgmErrorCode::malformed, name + ": empty file");
  if (magic != "P5") {
    if (magic.size() == 2 && magic[0] == 'P')
      throw PgmError(PgmErrorCode::unsupported_format,
                     name + ": unsupported PNM variant " + magic + " (only binary P5)");
    throw PgmError(PgmErrorCode::malformed, name + ": not a PGM file");
  }
  const int w = detail::pgm_int(buf, pos, name);
  const int h = detail::pgm_int(buf, pos, name);
  const int maxval = detail::pgm_int(buf, pos, name);
  if (w < 1 || h < 1) throw PgmError(PgmErrorCode::malformed, name + ": zero dimension");
  if (maxval < 1 || maxval > 255)
    throw PgmError(PgmErrorCode::unsupported_maxval,
                   name + ": unsupported maxval " + std::to_string(maxval) + " (8-bit only)");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    throw PgmError(PgmErrorCode::malformed, name + ": missing header terminator");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (buf.size() - pos < n)
    throw PgmError(PgmErrorCode::malformed,
                   name + ": truncated pixel payload (" + std::to_string(buf.size() - pos) +
                       " of " + std::to_string(n) + " bytes)");
  Image img(w, h);
  for (std::size_t i = 0; i < n; ++i)
    img.pixels[i] = static_cast<unsigned char>(buf[pos + i]) / 255.0;
  return img;
}

inline Image load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError(PgmErrorCode::missing_file, path + ": cannot open");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm(buf, path);
}

// Quantizes [0,1] to 8 bits with clamping.
inline std::string encode_pgm(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

inline void save_pgm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, path + ": cannot open for writing");
  const std::string bytes = encode_pgm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, path + ": write failed");
}

// ---------------------------------------------------------- alignment

inline constexpr int kCropWidth = 110;
inline constexpr int kCropHeight = 150;

inline constexpr Landmarks kCanonicalLandmarks{{30.0, 45.0}, {80.0, 45.0}, {55.0, 120.0}};

// dst = [a -b; b a] * src + t
struct Similarity {
  double a = 1.0, b = 0.0, tx = 0.0, ty = 0.0;

  Point apply(Point p) const { return {a * p.x - b * p.y + tx, b * p.x + a * p.y + ty}; }

  Similarity inverse() const {
    const double det = a * a + b * b;
    const double ia = a / det, ib = -b / det;
    return {ia, ib, -(ia * tx - ib * ty), -(ib * tx + ia * ty)};
  }
};

// Closed-form least-squares similarity taking src[i] onto dst[i].
inline Similarity fit_similarity(std::span<const Point> src, std::span<const Point> dst) {
  require(src.size() == dst.size() && src.size() >= 2, "fit_similarity: need >= 2 point pairs");
  const double n = static_cast<double>(src.size());
  Point ms, md;
  for (std::size_t i = 0; i < src.size(); ++i) {
    ms.x += src[i].x / n, ms.y += src[i].y / n;
    md.x += dst[i].x / n, md.y += dst[i].y / n;
  }
  double sxx = 0.0, num_a = 0.0, num_b = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double px = src[i].x - ms.x, py = src[i].y - ms.y;
    const double qx = dst[i].x - md.x, qy = dst[i].y - md.y;
    sxx += px * px + py * py;
    num_a += px * qx + py * qy;
    num_b += px * qy - py * qx;
  }
  if (sxx <= 0.0) fail(ErrorKind::alignment, "fit_similarity: source points coincide");
  Similarity s;
  s.a = num_a / sxx;
  s.b = num_b / sxx;
  s.tx = md.x - (s.a * ms.x - s.b * ms.y);
  s.ty = md.y - (s.b * ms.x + s.a * ms.y);
  return s;
}

inline void validate_landmarks(const Image& img, const Landmarks& lm) {
  for (const Point& p : lm.points()) {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= img.width - 1 && p.y <= img.height - 1))
      fail(ErrorKind::alignment, "landmark (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                     ") outside source image");
  }
  const double ex = lm.right_eye.x - lm.left_eye.x, ey = lm.right_eye.y - lm.left_eye.y;
  const double eye_dist = std::hypot(ex, ey);
  if (eye_dist < 2.0)
    fail(ErrorKind::alignment, "degenerate landmarks: eye distance " + std::to_string(eye_dist) + " px");
  const double mx = lm.mouth.x - lm.left_eye.x, my = lm.mouth.y - lm.left_eye.y;
  const double mouth_dist = std::hypot(mx, my);
  const double sin_angle = mouth_dist > 0.0 ? std::abs(ex * my - ey * mx) / (eye_dist * mouth_dist) : 0.0;
  if (sin_angle < 1e-3) fail(ErrorKind::alignment, "degenerate landmarks: collinear configuration");
}

inline double bilinear(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(x), img.width - 1);
  const int y0 = std::min(static_cast<int>(y), img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(x0, y0) + fx * (img.at(x1, y0) - img.at(x0, y0));
  const double bot = img.at(x0, y1) + fx * (img.at(x1, y1) - img.at(x0, y1));
  return top + fy * (bot - top);
}

inline Image warp_similarity(const Image& src, const Similarity& to_crop, int width, int height) {
  const Similarity back = to_crop.inverse();
  Image out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Point p = back.apply({static_cast<double>(x), static_cast<double>(y)});
      out.at(x, y) = bilinear(src, p.x, p.y);
    }
  return out;
}

inline Image align_and_crop(const Image& img, const Landmarks& lm) {
  validate_landmarks(img, lm);
  const auto src = lm.points();
  const auto dst = kCanonicalLandmarks.points();
  return warp_similarity(img, fit_similarity(src, dst), kCropWidth, kCropHeight);
}

// ---------------------------------------------------------- filters

inline Image median_filter_3x3(const Image& img) {
  Image out(img.width, img.height);
  std::array<double, 9> win{};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      int k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) win[k++] = img.clamped(x + dx, y + dy);
      std::nth_element(win.begin(), win.begin() + 4, win.end());
      out.at(x, y) = win[4];
    }
  return out;
}

// Population statistics; only the mean is removed when std < 1e-12 or
// when unit_std is false.
inline Image zero_mean_unit_std(const Image& img, bool unit_std = true) {
  const double n = static_cast<double>(img.pixels.size());
  double mean = 0.0;
  for (double v : img.pixels) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : img.pixels) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  Image out = img;
  const bool scale = unit_std && sd >= 1e-12;
  for (double& v : out.pixels) v = scale ? (v - mean) / sd : v - mean;
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) fail(ErrorKind::contract, "gaussian kernel: sigma must be > 0");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

// Separable, horizontal pass first, replicate border.
inline Image gaussian_smooth(const Image& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  Image tmp(img.width, img.height), out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * img.clamped(x + i, y);
      tmp.at(x, y) = s;
    }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.clamped(x, y + i);
      out.at(x, y) = s;
    }
  return out;
}

inline Image dog_filter(const Image& img, double sigma_inner, double sigma_outer) {
  if (!(sigma_inner > 0.0 && sigma_inner < sigma_outer))
    fail(ErrorKind::contract, "dog_filter: requires 0 < sigma_inner < sigma_outer");
  const Image a = gaussian_smooth(img, sigma_inner);
  const Image b = gaussian_smooth(img, sigma_outer);
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = a.pixels[i] - b.pixels[i];
  return out;
}

struct PreprocessConfig {
  double dog_inner = 1.0;
  double dog_outer = 2.0;
  bool unit_std = true;
  bool median_on_thermal = true;
};

// align -> median (thermal only) -> zero-mean/unit-std -> DoG
inline Image preprocess(const Image& img, const Landmarks& lm, Modality modality,
                        const PreprocessConfig& cfg = {}) {
  Image crop = align_and_crop(img, lm);
  if (modality == Modality::thermal && cfg.median_on_thermal) crop = median_filter_3x3(crop);
  crop = zero_mean_unit_std(crop, cfg.unit_std);
  return dog_filter(crop, cfg.dog_inner, cfg.dog_outer);
}

}  // namespace dpm
