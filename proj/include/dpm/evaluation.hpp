#pragma once

// Closed-set identification (CMC), verification (ROC) and modality-gap
// summaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "dpm/error.hpp"
#include "dpm/matcher.hpp"

namespace dpm {

struct Probe {
  Vector vector;
  std::uint32_t subject = 0;
  std::uint32_t image_id = 0;
};

struct CmcCurve {
  std::vector<double> accuracies;  // accuracies[r-1] = rank-r accuracy

  double rank1() const { return accuracies.empty() ? 0.0 : accuracies.front(); }
  double at_rank(std::size_t r) const { return accuracies.at(r - 1); }
};

inline CmcCurve cmc(const GalleryIndex& gallery, const std::vector<Probe>& probes) {
  require(!probes.empty(), "cmc: no probes");
  const std::set<std::uint32_t> enrolled(gallery.labels.begin(), gallery.labels.end());
  std::string missing;
  for (std::size_t i = 0; i < probes.size(); ++i)
    if (!enrolled.count(probes[i].subject))
      missing += (missing.empty() ? "" : ", ") + std::string("probe ") + std::to_string(i) +
                 " (subject " + std::to_string(probes[i].subject) + ")";
  if (!missing.empty()) fail(ErrorKind::protocol, "cmc: probe subjects not enrolled: " + missing);

  const std::size_t subjects = enrolled.size();
  std::vector<std::size_t> hits(subjects + 1, 0);
  for (const Probe& p : probes) ++hits[identify(gallery, p.vector).rank_of(p.subject)];
  CmcCurve c;
  c.accuracies.resize(subjects);
  std::size_t cum = 0;
  for (std::size_t r = 1; r <= subjects; ++r) {
    cum += hits[r];
    c.accuracies[r - 1] = static_cast<double>(cum) / static_cast<double>(probes.size());
  }
  return c;
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

// An attempt is accepted when score >= threshold. The first point has
// threshold -inf, the last +inf.
struct RocCurve {
  std::vector<RocPoint> points;  // ascending threshold
  std::size_t genuine = 0;
  std::size_t impostor = 0;
};

struct Attempt {
  double score;
  bool genuine;
};

inline RocCurve roc_from_attempts(std::vector<Attempt> attempts) {
  RocCurve c;
  for (const Attempt& a : attempts) (a.genuine ? c.genuine : c.impostor)++;
  if (c.impostor == 0) fail(ErrorKind::protocol, "roc: no impostor attempts");
  if (c.genuine == 0) fail(ErrorKind::protocol, "roc: no genuine attempts");
  std::sort(attempts.begin(), attempts.end(),
            [](const Attempt& a, const Attempt& b) { return a.score > b.score; });

  const double inf = std::numeric_limits<double>::infinity();
  const double ng = static_cast<double>(c.genuine), ni = static_cast<double>(c.impostor);
  std::vector<RocPoint> desc{{inf, 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < attempts.size();) {
    const double s = attempts[i].score;
    while (i < attempts.size() && attempts[i].score == s) {
      (attempts[i].genuine ? tp : fp)++;
      ++i;
    }
    desc.push_back({s, static_cast<double>(fp) / ni, static_cast<double>(tp) / ng});
  }
  desc.push_back({-inf, 1.0, 1.0});
  c.points.assign(desc.rbegin(), desc.rend());
  return c;
}

// Every (probe, gallery image) pair is one attempt.
inline RocCurve roc(const GalleryIndex& gallery, const std::vector<Probe>& probes) {
  const std::set<std::uint32_t> subjects(gallery.labels.begin(), gallery.labels.end());
  if (subjects.size() < 2) fail(ErrorKind::protocol, "roc: gallery needs at least 2 subjects");
  std::vector<Attempt> attempts;
  attempts.reserve(probes.size() * gallery.size());
  for (const Probe& p : probes) {
    const Vector s = score_all(gallery, p.vector);
    for (std::size_t r = 0; r < s.size(); ++r) attempts.push_back({s[r], gallery.labels[r] == p.subject});
  }
  return roc_from_attempts(std::move(attempts));
}

// Trapezoidal area under (fpr, tpr).
inline double auc(const RocCurve& c) {
  double a = 0.0;
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    const auto& p = c.points[i - 1];
    const auto& q = c.points[i];
    a += (p.fpr - q.fpr) * (p.tpr + q.tpr) / 2.0;
  }
  return a;
}

struct GapReport {
  double rank1_within_modality = 0.0;
  double rank1_cross_baseline = 0.0;
  double rank1_cross_dpm = 0.0;
  double gap_bridged_fraction = 0.0;

  double bridged_percent() const { return 100.0 * gap_bridged_fraction; }
};

// Inputs may be fractions or percentages as long as all three agree.
inline GapReport modality_gap_report(double within, double cross_baseline, double cross_dpm) {
  if (!(within > cross_baseline))
    fail(ErrorKind::protocol, "modality gap is degenerate: within-modality rank-1 (" +
                                  std::to_string(within) + ") <= cross-modal baseline (" +
                                  std::to_string(cross_baseline) + ")");
  return {within, cross_baseline, cross_dpm, (cross_dpm - cross_baseline) / (within - cross_baseline)};
}

inline GapReport modality_gap_report(const CmcCurve& within, const CmcCurve& baseline, const CmcCurve& mapped) {
  return modality_gap_report(within.rank1(), baseline.rank1(), mapped.rank1());
}

// ------------------------------------------------------------ CSV output

inline void write_cmc_csv(std::ostream& out, const CmcCurve& c) {
  out << "rank,accuracy\n";
  out.precision(17);
  for (std::size_t r = 0; r < c.accuracies.size(); ++r) out << r + 1 << ',' << c.accuracies[r] << '\n';
}

inline void write_roc_csv(std::ostream& out, const RocCurve& c) {
  out << "threshold,fpr,tpr\n";
  out.precision(17);
  for (const auto& p : c.points) {
    if (std::isinf(p.threshold))
      out << (p.threshold < 0 ? "-inf" : "inf");
    else
      out << p.threshold;
    out << ',' << p.fpr << ',' << p.tpr << '\n';
  }
}

inline void write_gap_report(std::ostream& out, const GapReport& g) {
  out.precision(10);
  out << "rank1_within_modality=" << g.rank1_within_modality << '\n'
      << "rank1_cross_baseline=" << g.rank1_cross_baseline << '\n'
      << "rank1_cross_dpm=" << g.rank1_cross_dpm << '\n'
      << "gap_bridged_fraction=" << g.gap_bridged_fraction << '\n'
      << "gap_bridged_percent=" << g.bridged_percent() << '\n';
}

}  // namespace dpm
