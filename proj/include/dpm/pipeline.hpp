#pragma once

// End-to-end orchestration over a manifest: descriptor extraction, PCA and
// network training, gallery construction and probe encoding.

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dpm/config.hpp"
#include "dpm/dpm_net.hpp"
#include "dpm/embedding.hpp"
#include "dpm/evaluation.hpp"
#include "dpm/features.hpp"
#include "dpm/image.hpp"
#include "dpm/manifest.hpp"
#include "dpm/matcher.hpp"

namespace dpm {

using Logger = std::function<void(const std::string&)>;

inline std::vector<Image> load_images(const Manifest& m, unsigned threads = 1) {
  std::vector<Image> out(m.rows.size());
  parallel_for(m.rows.size(), threads, [&](std::size_t i) { out[i] = load_pgm(m.resolve(m.rows[i]).string()); });
  return out;
}

inline std::vector<DescriptorSet> extract_all(const Manifest& m, const std::vector<Image>& images,
                                              const EncodeConfig& cfg, unsigned threads = 1) {
  std::vector<DescriptorSet> out(m.rows.size());
  parallel_for(m.rows.size(), threads, [&](std::size_t i) {
    const auto& r = m.rows[i];
    const Image crop = preprocess(images[i], r.landmarks, r.modality, cfg.preprocess);
    out[i] = extract_dense(crop, cfg.grid, r.path);
  });
  return out;
}

inline std::vector<PatchMatrix> embed_all(const std::vector<DescriptorSet>& sets, const PcaModel& pca,
                                          unsigned threads = 1) {
  std::vector<PatchMatrix> out(sets.size());
  parallel_for(sets.size(), threads, [&](std::size_t i) { out[i] = embed_image(sets[i], pca); });
  return out;
}

// Pools descriptors from every row (both modalities).
inline PcaModel fit_pca(const std::vector<DescriptorSet>& sets, const RunConfig& cfg) {
  Rng rng(synth_detail::derive_seed(cfg.seed, 0x9ca));
  const Matrix pooled = pool_descriptors(sets);
  return pca_fit(pooled, std::min(cfg.pca_dim, pooled.cols()), rng, cfg.pca_max_samples);
}

struct TrainingPairs {
  Matrix inputs;
  Matrix targets;
};

// Pairs grid position k of the source-modality image with grid position k
// of its counterpart sharing pair_id. Ordered by source row, then grid index.
inline TrainingPairs make_training_pairs(const Manifest& m, const std::vector<PatchMatrix>& patches,
                                         Modality source, std::size_t max_pairs, Rng& rng) {
  std::map<std::uint32_t, std::size_t> target_row;
  for (std::size_t i = 0; i < m.rows.size(); ++i)
    if (m.rows[i].modality != source) target_row.emplace(m.rows[i].pair_id, i);

  std::vector<std::pair<std::size_t, std::size_t>> images;
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    if (m.rows[i].modality != source) continue;
    const auto it = target_row.find(m.rows[i].pair_id);
    if (it == target_row.end()) continue;
    if (m.rows[it->second].subject != m.rows[i].subject)
      fail(ErrorKind::protocol, "pair_id " + std::to_string(m.rows[i].pair_id) + " links different subjects");
    if (patches[i].rows() != patches[it->second].rows())
      fail(ErrorKind::protocol, "pair_id " + std::to_string(m.rows[i].pair_id) + " has mismatched grids");
    images.emplace_back(i, it->second);
  }
  if (images.empty()) fail(ErrorKind::protocol, "manifest contains no paired training images");

  const std::size_t per = patches[images.front().first].rows(), dim = patches[images.front().first].cols();
  const std::size_t total = images.size() * per;
  const auto keep = subsample_indices(total, max_pairs, rng);
  TrainingPairs p{Matrix(keep.size(), dim), Matrix(keep.size(), dim)};
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto [src, dst] = images[keep[r] / per];
    const std::size_t k = keep[r] % per;
    std::copy_n(&patches[src](k, 0), dim, &p.inputs(r, 0));
    std::copy_n(&patches[dst](k, 0), dim, &p.targets(r, 0));
  }
  return p;
}

struct TrainedModels {
  PcaModel pca;
  DpmModel dpm;
  TrainReport report;
};

inline TrainedModels train_pipeline(const Manifest& m, const std::vector<DescriptorSet>& sets, const RunConfig& cfg,
                                    const Logger& log = {}) {
  TrainedModels out;
  out.pca = fit_pca(sets, cfg);
  if (log) log("pca: fitted " + std::to_string(out.pca.out_dim()) + " components");
  const auto patches = embed_all(sets, out.pca, cfg.threads);
  Rng rng(synth_detail::derive_seed(cfg.seed, 0x9a125));
  const TrainingPairs pairs = make_training_pairs(m, patches, cfg.source_modality(), cfg.max_train_pairs, rng);
  if (log) log("train: " + std::to_string(pairs.inputs.rows()) + " patch pairs");
  auto res = train(cfg.network(), pairs.inputs, pairs.targets, [&](std::size_t epoch, double loss) {
    if (log) log("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  });
  out.dpm = std::move(res.model);
  out.report = std::move(res.report);
  return out;
}

inline TrainedModels train_pipeline(const Manifest& m, const RunConfig& cfg, const Logger& log = {}) {
  const auto images = load_images(m, cfg.threads);
  const auto sets = extract_all(m, images, cfg.encode(), cfg.threads);
  return train_pipeline(m, sets, cfg, log);
}

enum class GalleryPolicy { one, two, all };

inline GalleryPolicy parse_gallery_policy(const std::string& s) {
  if (s == "one" || s == "1") return GalleryPolicy::one;
  if (s == "two" || s == "2") return GalleryPolicy::two;
  if (s == "all") return GalleryPolicy::all;
  fail(ErrorKind::usage, "unknown gallery policy '" + s + "' (expected one, two or all)");
}

// The first k rows of `modality` per subject, in manifest order.
inline std::vector<std::size_t> select_gallery(const Manifest& m, Modality modality, GalleryPolicy policy) {
  const std::size_t limit = policy == GalleryPolicy::one ? 1 : policy == GalleryPolicy::two ? 2 : SIZE_MAX;
  std::map<std::uint32_t, std::size_t> taken;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    if (m.rows[i].modality != modality) continue;
    if (taken[m.rows[i].subject]++ < limit) out.push_back(i);
  }
  return out;
}

// Mapping is applied to rows of the network's source modality only.
inline Vector vector_from_patches(const PatchMatrix& patches, Modality modality, const DpmModel* mapping,
                                  Modality source) {
  if (mapping && modality == source) return l2_normalize(map_batch(*mapping, patches).data());
  return l2_normalize(patches.data());
}

inline GalleryIndex gallery_from_patches(const Manifest& m, const std::vector<PatchMatrix>& patches,
                                         const std::vector<std::size_t>& rows, const DpmModel* mapping,
                                         Modality source, unsigned threads = 1) {
  std::vector<Vector> vecs(rows.size());
  std::vector<std::uint32_t> labels, ids;
  for (std::size_t r : rows) {
    labels.push_back(m.rows[r].subject);
    ids.push_back(static_cast<std::uint32_t>(r));
  }
  parallel_for(rows.size(), threads, [&](std::size_t k) {
    vecs[k] = vector_from_patches(patches[rows[k]], m.rows[rows[k]].modality, mapping, source);
  });
  return make_gallery(vecs, std::move(labels), std::move(ids));
}

// Every row of `modality`, minus rows already enrolled in `exclude`.
inline std::vector<Probe> probes_from_patches(const Manifest& m, const std::vector<PatchMatrix>& patches,
                                              Modality modality, const DpmModel* mapping, Modality source,
                                              const std::vector<std::uint32_t>& exclude = {},
                                              unsigned threads = 1) {
  const std::set<std::uint32_t> skip(exclude.begin(), exclude.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < m.rows.size(); ++i)
    if (m.rows[i].modality == modality && !skip.count(static_cast<std::uint32_t>(i))) rows.push_back(i);
  std::vector<Probe> out(rows.size());
  parallel_for(rows.size(), threads, [&](std::size_t k) {
    const std::size_t r = rows[k];
    out[k] = {vector_from_patches(patches[r], m.rows[r].modality, mapping, source), m.rows[r].subject,
              static_cast<std::uint32_t>(r)};
  });
  return out;
}

// Encodes only the rows that are needed.
inline std::vector<PatchMatrix> encode_rows(const Manifest& m, const std::vector<std::size_t>& rows,
                                            const PcaModel& pca, const EncodeConfig& cfg, unsigned threads = 1) {
  std::vector<PatchMatrix> out(m.rows.size());
  parallel_for(rows.size(), threads, [&](std::size_t k) {
    const auto& r = m.rows[rows[k]];
    out[rows[k]] = encode_patches(load_pgm(m.resolve(r).string()), r.landmarks, r.modality, pca, cfg);
  });
  return out;
}

}  // namespace dpm
