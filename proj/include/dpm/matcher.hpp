#pragma once

// Gallery encoding and cosine-similarity identification.
//
// Gallery images are mapped through the network, probes are not; both are
// concatenated patch vectors, L2-normalized, so a probe is scored against
// the whole gallery by one matrix-vector product.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpm/dpm_net.hpp"
#include "dpm/embedding.hpp"
#include "dpm/error.hpp"
#include "dpm/features.hpp"
#include "dpm/image.hpp"
#include "dpm/numerics.hpp"

namespace dpm {

struct EncodeConfig {
  PreprocessConfig preprocess;
  GridSpec grid;
};

// preprocess -> dense descriptors -> PCA + position embedding
inline PatchMatrix encode_patches(const Image& img, const Landmarks& lm, Modality modality,
                                  const PcaModel& pca, const EncodeConfig& cfg = {}) {
  const Image crop = preprocess(img, lm, modality, cfg.preprocess);
  const DescriptorSet ds = extract_dense(crop, cfg.grid);
  return embed_image(ds, pca, crop.width, crop.height);
}

// Rows concatenated in descriptor order, then L2-normalized. `mapping`
// may be null for the unmapped (baseline or probe) path.
inline Vector encode_image(const Image& img, const Landmarks& lm, Modality modality,
                           const PcaModel& pca, const DpmModel* mapping,
                           const EncodeConfig& cfg = {}) {
  PatchMatrix patches = encode_patches(img, lm, modality, pca, cfg);
  if (mapping) patches = map_batch(*mapping, patches);
  return l2_normalize(patches.data());
}

inline Vector encode_visible_gallery_image(const Image& img, const Landmarks& lm, const PcaModel& pca,
                                           const DpmModel& dpm, const EncodeConfig& cfg = {}) {
  return encode_image(img, lm, Modality::visible, pca, &dpm, cfg);
}

inline Vector encode_thermal_probe(const Image& img, const Landmarks& lm, const PcaModel& pca,
                                   const EncodeConfig& cfg = {}) {
  return encode_image(img, lm, Modality::thermal, pca, nullptr, cfg);
}

struct GalleryIndex {
  Matrix vectors;                     // G x D, rows unit-norm or all-zero
  std::vector<std::uint32_t> labels;  // subject id per row
  std::vector<std::uint32_t> image_ids;
  std::vector<bool> zero_rows;

  std::size_t size() const noexcept { return vectors.rows(); }
  std::size_t dim() const noexcept { return vectors.cols(); }

  friend bool operator==(const GalleryIndex&, const GalleryIndex&) = default;
};

// Rows are normalized on insertion; rows with norm < 1e-12 are stored as
// zeros and flagged.
inline GalleryIndex make_gallery(const std::vector<Vector>& rows, std::vector<std::uint32_t> labels,
                                 std::vector<std::uint32_t> image_ids) {
  require(rows.size() == labels.size() && rows.size() == image_ids.size(),
          "make_gallery: rows, labels and image ids differ in length");
  const std::size_t dim = rows.empty() ? 0 : rows.front().size();
  GalleryIndex g{Matrix(rows.size(), dim), std::move(labels), std::move(image_ids),
                 std::vector<bool>(rows.size(), false)};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == dim, "make_gallery: rows differ in dimension");
    const Vector n = l2_normalize(rows[r]);
    const bool zero = squared_norm(n) < 0.5;
    g.zero_rows[r] = zero;
    if (zero)
      std::fill(g.vectors.row(r).begin(), g.vectors.row(r).end(), 0.0);
    else
      std::copy(n.begin(), n.end(), g.vectors.row(r).begin());
  }
  return g;
}

inline Vector score_all(const GalleryIndex& gallery, std::span<const double> probe) {
  if (probe.size() != gallery.dim())
    fail(ErrorKind::contract, "score_all: probe dimension " + std::to_string(probe.size()) +
                                  " != gallery dimension " + std::to_string(gallery.dim()));
  Vector s = gemv(gallery.vectors, probe);
  for (std::size_t r = 0; r < s.size(); ++r)
    if (gallery.zero_rows[r]) s[r] = 0.0;
  return s;
}

struct SubjectScore {
  std::uint32_t subject = 0;
  double score = 0.0;
  friend bool operator==(const SubjectScore&, const SubjectScore&) = default;
};

struct MatchResult {
  std::vector<SubjectScore> ranked;  // descending score, lower subject id first on ties
  Vector scores;                     // per gallery row

  std::uint32_t best() const { return ranked.front().subject; }

  // 1-based rank of `subject`, or 0 if it is not enrolled.
  std::size_t rank_of(std::uint32_t subject) const {
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].subject == subject) return i + 1;
    return 0;
  }
};

// Per-subject max fusion over gallery rows.
inline std::vector<SubjectScore> rank_subjects(std::span<const double> scores,
                                               std::span<const std::uint32_t> labels) {
  std::map<std::uint32_t, double> best;
  for (std::size_t r = 0; r < scores.size(); ++r) {
    auto [it, inserted] = best.try_emplace(labels[r], scores[r]);
    if (!inserted) it->second = std::max(it->second, scores[r]);
  }
  std::vector<SubjectScore> ranked;
  ranked.reserve(best.size());
  for (const auto& [subject, score] : best) ranked.push_back({subject, score});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const SubjectScore& a, const SubjectScore& b) { return a.score > b.score; });
  return ranked;
}

inline MatchResult identify(const GalleryIndex& gallery, std::span<const double> probe) {
  if (gallery.size() == 0) fail(ErrorKind::contract, "identify: empty gallery");
  MatchResult res;
  res.scores = score_all(gallery, probe);
  res.ranked = rank_subjects(res.scores, gallery.labels);
  return res;
}

}  // namespace dpm
