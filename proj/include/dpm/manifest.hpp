#pragma once

// Dataset manifest: CSV with header
//   path,subject,modality,pair_id,lex,ley,rex,rey,mx,my
// Paths are resolved relative to the manifest's directory. Fields may not
// contain commas or quotes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dpm/error.hpp"
#include "dpm/image.hpp"

namespace dpm {

inline constexpr const char* kManifestHeader = "path,subject,modality,pair_id,lex,ley,rex,rey,mx,my";

struct ManifestRow {
  std::string path;
  std::uint32_t subject = 0;
  Modality modality = Modality::visible;
  std::uint32_t pair_id = 0;
  Landmarks landmarks;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  std::filesystem::path resolve(const ManifestRow& r) const {
    const std::filesystem::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
  }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::uint32_t parse_u32(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s[0] == '-' || v > 0xffffffffULL)
    fail(ErrorKind::format, what + ": expected unsigned integer, got '" + s + "'");
  return static_cast<std::uint32_t>(v);
}

inline double parse_f64(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) fail(ErrorKind::format, what + ": expected number, got '" + s + "'");
  return v;
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, std::filesystem::path base_dir = {}) {
  Manifest m{std::move(base_dir), {}};
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::format, "manifest: empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    fail(ErrorKind::format, "manifest: bad header '" + line + "', expected '" + kManifestHeader + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    const std::string where = "manifest line " + std::to_string(lineno);
    if (f.size() != 10) fail(ErrorKind::format, where + ": expected 10 fields, got " + std::to_string(f.size()));
    ManifestRow r;
    r.path = f[0];
    r.subject = detail::parse_u32(f[1], where + " subject");
    r.modality = parse_modality(f[2]);
    r.pair_id = detail::parse_u32(f[3], where + " pair_id");
    r.landmarks.left_eye = {detail::parse_f64(f[4], where), detail::parse_f64(f[5], where)};
    r.landmarks.right_eye = {detail::parse_f64(f[6], where), detail::parse_f64(f[7], where)};
    r.landmarks.mouth = {detail::parse_f64(f[8], where), detail::parse_f64(f[9], where)};
    m.rows.push_back(std::move(r));
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, path.string() + ": cannot open manifest");
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestRow>& rows) {
  out << kManifestHeader << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    const auto& l = r.landmarks;
    out << r.path << ',' << r.subject << ',' << to_string(r.modality) << ',' << r.pair_id << ','
        << l.left_eye.x << ',' << l.left_eye.y << ',' << l.right_eye.x << ',' << l.right_eye.y << ','
        << l.mouth.x << ',' << l.mouth.y << '\n';
  }
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, path.string() + ": cannot open for writing");
  write_manifest(out, rows);
  if (!out) fail(ErrorKind::io, path.string() + ": write failed");
}

}  // namespace dpm
