#pragma once

// Little-endian binary artifacts.
//
//   PCA      "DPMPCA01" u32 in_dim, u32 out_dim, mean[in], basis[out*in], eigenvalues[out]
//   network  "DPMNET01" u32 N, u32 d, N x (u32 rows, u32 cols, W, u32 len, b),
//            u32 rows, u32 cols, W_out, u64 seed
//   gallery  "DPMGAL01" u32 G, u32 D, G*D f64, G x (u32 subject_id, u32 image_id)
//   dump     "DPMDSC1\0" u32 count, count x (f64 cx, f64 cy, u32 scale, u32 dim, dim f64)
//
// All floats are IEEE-754 binary64. The format version is the digit
// suffix of the magic; there is no separate version field.

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "dpm/dpm_net.hpp"
#include "dpm/embedding.hpp"
#include "dpm/error.hpp"
#include "dpm/features.hpp"
#include "dpm/matcher.hpp"

namespace dpm {

inline constexpr std::string_view kPcaMagic{"DPMPCA01", 8};
inline constexpr std::string_view kNetMagic{"DPMNET01", 8};
inline constexpr std::string_view kGalleryMagic{"DPMGAL01", 8};
inline constexpr std::string_view kDescriptorMagic{"DPMDSC1\0", 8};

struct ArtifactHeader {
  std::string magic;  // 8 bytes
  std::uint32_t version = 0;
};

class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.append(s.data(), s.size()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void count(std::size_t n, const char* what) {
    if (n > 0xffffffffULL) fail(ErrorKind::contract, std::string(what) + " exceeds u32 range");
    u32(static_cast<std::uint32_t>(n));
  }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string name) : buf_(std::move(bytes)), name_(std::move(name)) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    const std::string_view found(buf_.data() + pos_, magic.size());
    if (found != magic)
      fail(ErrorKind::format, name_ + ": wrong magic, expected \"" + printable(magic) + "\" found \"" +
                                  printable(found) + "\"");
    pos_ += magic.size();
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::vector<double> f64s(std::size_t n, const char* what) {
    if (n > remaining() / 8) truncated(what, n * 8);
    std::vector<double> v(n);
    for (double& x : v) x = f64(what);
    return v;
  }

  void expect_end() {
    if (remaining() != 0)
      fail(ErrorKind::format, name_ + ": " + std::to_string(remaining()) + " trailing bytes at offset " +
                                  std::to_string(pos_));
  }

  const std::string& name() const noexcept { return name_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) truncated(what, n);
  }
  [[noreturn]] void truncated(const char* what, std::size_t n) {
    fail(ErrorKind::format, name_ + ": truncated file reading " + what + " at offset " + std::to_string(pos_) +
                                " (need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
  }
  static std::string printable(std::string_view s) {
    std::string out;
    for (char c : s) out += (c >= 32 && c < 127) ? std::string(1, c) : "\\x" + std::to_string(static_cast<unsigned char>(c));
    return out;
  }

  std::string buf_;
  std::size_t pos_ = 0;
  std::string name_;
};

// Writes atomically enough for our purposes: full buffer, then fsync.
inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) fail(ErrorKind::io, path.string() + ": cannot open for writing");
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n <= 0) {
      ::close(fd);
      fail(ErrorKind::io, path.string() + ": write failed");
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    fail(ErrorKind::io, path.string() + ": fsync failed");
  }
  if (::close(fd) != 0) fail(ErrorKind::io, path.string() + ": close failed");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ArtifactHeader read_header(const std::string& bytes) {
  if (bytes.size() < 8) fail(ErrorKind::format, "artifact shorter than its 8-byte magic");
  ArtifactHeader h{bytes.substr(0, 8), 0};
  for (auto m : {kPcaMagic, kNetMagic, kGalleryMagic})
    if (h.magic == m) h.version = static_cast<std::uint32_t>(std::stoul(h.magic.substr(6, 2)));
  if (h.magic == kDescriptorMagic) h.version = 1;
  if (h.version != 1) fail(ErrorKind::format, "unrecognized artifact magic");
  return h;
}

// ------------------------------------------------------------------ PCA

inline void validate(const PcaModel& m) {
  const std::size_t in = m.in_dim(), out = m.out_dim();
  if (in == 0 || out == 0 || out > in) fail(ErrorKind::numeric, "PCA invariant: bad dimensions");
  if (m.mean.size() != in || m.eigenvalues.size() != out)
    fail(ErrorKind::numeric, "PCA invariant: mean/eigenvalue length mismatch");
  if (!m.basis.all_finite()) fail(ErrorKind::numeric, "PCA invariant: non-finite basis");
  for (double v : m.mean)
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "PCA invariant: non-finite mean");
  for (std::size_t k = 0; k < out; ++k) {
    const double e = m.eigenvalues[k];
    if (!std::isfinite(e) || e < -1e-12) fail(ErrorKind::numeric, "PCA invariant: negative eigenvalue");
    if (k > 0 && e > m.eigenvalues[k - 1]) fail(ErrorKind::numeric, "PCA invariant: eigenvalues not non-increasing");
  }
  for (std::size_t a = 0; a < out; ++a)
    for (std::size_t b = a; b < out; ++b) {
      const double g = dot(m.basis.row(a), m.basis.row(b));
      if (std::abs(g - (a == b ? 1.0 : 0.0)) > 1e-8)
        fail(ErrorKind::numeric, "PCA invariant: basis rows not orthonormal (rows " + std::to_string(a) + "," +
                                     std::to_string(b) + ")");
    }
}

inline std::string encode_pca(const PcaModel& m) {
  ByteWriter w;
  w.raw(kPcaMagic);
  w.count(m.in_dim(), "in_dim");
  w.count(m.out_dim(), "out_dim");
  w.f64s(m.mean);
  w.f64s(m.basis.data());
  w.f64s(m.eigenvalues);
  return w.bytes();
}

inline PcaModel decode_pca(std::string bytes, std::string name = "<pca>") {
  ByteReader r(std::move(bytes), std::move(name));
  r.expect_magic(kPcaMagic);
  const std::size_t in = r.u32("in_dim"), out = r.u32("out_dim");
  PcaModel m;
  m.mean = r.f64s(in, "mean");
  m.basis = Matrix(out, in, r.f64s(out * in, "basis"));
  m.eigenvalues = r.f64s(out, "eigenvalues");
  r.expect_end();
  validate(m);
  return m;
}

// ------------------------------------------------------------- network

inline void validate(const DpmModel& m) {
  check_shapes(m);
  if (!all_finite(m)) fail(ErrorKind::numeric, "network invariant: non-finite parameters");
}

inline std::string encode_dpm(const DpmModel& m) {
  ByteWriter w;
  w.raw(kNetMagic);
  w.count(m.layers.size(), "layer count");
  w.count(m.input_dim(), "input_dim");
  for (const auto& l : m.layers) {
    w.count(l.weights.rows(), "rows");
    w.count(l.weights.cols(), "cols");
    w.f64s(l.weights.data());
    w.count(l.bias.size(), "bias length");
    w.f64s(l.bias);
  }
  w.count(m.output.rows(), "rows");
  w.count(m.output.cols(), "cols");
  w.f64s(m.output.data());
  w.u64(m.seed);
  return w.bytes();
}

inline DpmModel decode_dpm(std::string bytes, std::string name = "<dpm>") {
  ByteReader r(std::move(bytes), std::move(name));
  r.expect_magic(kNetMagic);
  const std::size_t n = r.u32("layer count"), d = r.u32("input_dim");
  DpmModel m;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t rows = r.u32("rows"), cols = r.u32("cols");
    Matrix w(rows, cols, r.f64s(rows * cols, "weights"));
    const std::size_t len = r.u32("bias length");
    m.layers.push_back({std::move(w), r.f64s(len, "bias")});
  }
  const std::size_t rows = r.u32("rows"), cols = r.u32("cols");
  m.output = Matrix(rows, cols, r.f64s(rows * cols, "output weights"));
  m.seed = r.u64("seed");
  r.expect_end();
  validate(m);
  if (m.input_dim() != d) fail(ErrorKind::numeric, "network invariant: header d does not match first layer");
  return m;
}

// ------------------------------------------------------------- gallery

inline void validate(const GalleryIndex& g) {
  if (g.labels.size() != g.size() || g.image_ids.size() != g.size() || g.zero_rows.size() != g.size())
    fail(ErrorKind::numeric, "gallery invariant: label count != row count");
  for (std::size_t r = 0; r < g.size(); ++r) {
    const auto row = g.vectors.row(r);
    const double n2 = squared_norm(row);
    const bool zero = std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; });
    if (!std::isfinite(n2) || (!zero && std::abs(std::sqrt(n2) - 1.0) > 1e-9))
      fail(ErrorKind::numeric, "gallery invariant: row " + std::to_string(r) + " is neither unit-norm nor zero");
    if (zero != g.zero_rows[r]) fail(ErrorKind::numeric, "gallery invariant: zero-row flag mismatch");
  }
}

inline std::string encode_gallery(const GalleryIndex& g) {
  ByteWriter w;
  w.raw(kGalleryMagic);
  w.count(g.size(), "G");
  w.count(g.dim(), "D");
  w.f64s(g.vectors.data());
  for (std::size_t r = 0; r < g.size(); ++r) {
    w.u32(g.labels[r]);
    w.u32(g.image_ids[r]);
  }
  return w.bytes();
}

inline GalleryIndex decode_gallery(std::string bytes, std::string name = "<gallery>") {
  ByteReader r(std::move(bytes), std::move(name));
  r.expect_magic(kGalleryMagic);
  const std::size_t rows = r.u32("G"), dim = r.u32("D");
  GalleryIndex g;
  g.vectors = Matrix(rows, dim, r.f64s(rows * dim, "vectors"));
  for (std::size_t i = 0; i < rows; ++i) {
    g.labels.push_back(r.u32("subject_id"));
    g.image_ids.push_back(r.u32("image_id"));
  }
  r.expect_end();
  g.zero_rows.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto row = g.vectors.row(i);
    g.zero_rows[i] = std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; });
  }
  validate(g);
  return g;
}

// ---------------------------------------------------- descriptor dump

inline std::string encode_descriptors(const DescriptorSet& ds) {
  ByteWriter w;
  w.raw(kDescriptorMagic);
  w.count(ds.size(), "descriptor count");
  for (const auto& d : ds.descriptors) {
    w.f64(d.center.x);
    w.f64(d.center.y);
    w.count(d.scale_index, "scale index");
    w.count(d.values.size(), "descriptor dim");
    w.f64s(d.values);
  }
  return w.bytes();
}

inline DescriptorSet decode_descriptors(std::string bytes, std::string name = "<descriptors>") {
  ByteReader r(std::move(bytes), name);
  r.expect_magic(kDescriptorMagic);
  const std::size_t n = r.u32("descriptor count");
  DescriptorSet ds{name, {}};
  for (std::size_t i = 0; i < n; ++i) {
    RawDescriptor d;
    d.center.x = r.f64("cx");
    d.center.y = r.f64("cy");
    d.scale_index = r.u32("scale index");
    const std::size_t dim = r.u32("descriptor dim");
    d.values = r.f64s(dim, "values");
    ds.descriptors.push_back(std::move(d));
  }
  r.expect_end();
  return ds;
}

// ------------------------------------------------------ file wrappers

inline void save(const PcaModel& m, const std::filesystem::path& p) {
  validate(m);
  write_file(p, encode_pca(m));
}
inline void save(const DpmModel& m, const std::filesystem::path& p) {
  validate(m);
  write_file(p, encode_dpm(m));
}
inline void save(const GalleryIndex& g, const std::filesystem::path& p) {
  validate(g);
  write_file(p, encode_gallery(g));
}
inline void save(const DescriptorSet& ds, const std::filesystem::path& p) { write_file(p, encode_descriptors(ds)); }

inline PcaModel load_pca(const std::filesystem::path& p) { return decode_pca(read_file(p), p.string()); }
inline DpmModel load_dpm(const std::filesystem::path& p) { return decode_dpm(read_file(p), p.string()); }
inline GalleryIndex load_gallery(const std::filesystem::path& p) { return decode_gallery(read_file(p), p.string()); }
inline DescriptorSet load_descriptors(const std::filesystem::path& p) {
  return decode_descriptors(read_file(p), p.string());
}

}  // namespace dpm
