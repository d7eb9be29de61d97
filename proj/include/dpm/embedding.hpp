#pragma once

// PCA over pooled descriptors plus block-position embedding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dpm/error.hpp"
#include "dpm/features.hpp"
#include "dpm/numerics.hpp"

namespace dpm {

inline constexpr std::size_t kPcaDim = 64;
inline constexpr std::size_t kMaxPcaSamples = 1'000'000;

struct PcaModel {
  Vector mean;         // in_dim
  Matrix basis;        // out_dim x in_dim, orthonormal rows
  Vector eigenvalues;  // out_dim, non-increasing

  std::size_t in_dim() const noexcept { return basis.cols(); }
  std::size_t out_dim() const noexcept { return basis.rows(); }

  friend bool operator==(const PcaModel&, const PcaModel&) = default;
};

// Rows of a patch matrix are [pca coefficients..., nx, ny].
using PatchMatrix = Matrix;

// Uniform subsample without replacement, returned in ascending order so
// the pooled sample keeps its original ordering.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t keep, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (keep >= n) return idx;
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Population covariance (1/N). Each basis row is sign-fixed so that its
// largest-magnitude entry (first one on ties) is positive.
inline PcaModel pca_fit(const Matrix& samples, std::size_t out_dim, Rng& rng,
                        std::size_t max_samples = kMaxPcaSamples) {
  const std::size_t dim = samples.cols();
  if (out_dim < 1 || out_dim > dim)
    fail(ErrorKind::contract, "pca_fit: out_dim " + std::to_string(out_dim) +
                                  " must be in [1, " + std::to_string(dim) + "]");
  if (samples.rows() < out_dim)
    fail(ErrorKind::numeric, "pca_fit: insufficient sample (" + std::to_string(samples.rows()) +
                                 " rows for " + std::to_string(out_dim) + " components)");

  const auto rows = subsample_indices(samples.rows(), max_samples, rng);
  const double n = static_cast<double>(rows.size());

  Vector mean(dim, 0.0);
  for (std::size_t r : rows) {
    const auto x = samples.row(r);
    for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
  }
  for (double& m : mean) m /= n;

  Matrix cov(dim, dim);
  Vector d(dim);
  for (std::size_t r : rows) {
    const auto x = samples.row(r);
    for (std::size_t j = 0; j < dim; ++j) d[j] = x[j] - mean[j];
    for (std::size_t a = 0; a < dim; ++a) {
      const double da = d[a];
      double* crow = &cov(a, 0);
      for (std::size_t b = 0; b < dim; ++b) crow[b] += da * d[b];
    }
  }
  for (double& c : cov.data()) c /= n;

  double trace = 0.0;
  for (std::size_t j = 0; j < dim; ++j) trace += cov(j, j);
  if (!(trace > 1e-24)) fail(ErrorKind::numeric, "pca_fit: zero-variance sample");

  const SymmetricEigen eig = symmetric_eigen(cov);
  PcaModel model{std::move(mean), Matrix(out_dim, dim), Vector(out_dim)};
  for (std::size_t k = 0; k < out_dim; ++k) {
    const auto v = eig.vectors.row(k);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < dim; ++j)
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    const double sign = v[arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < dim; ++j) model.basis(k, j) = sign * v[j];
    model.eigenvalues[k] = eig.values[k];
  }
  return model;
}

// basis * (d - mean)
inline Vector pca_apply(const PcaModel& model, std::span<const double> d) {
  require(d.size() == model.in_dim(), "pca_apply: descriptor length != model in_dim");
  Vector centered(d.size());
  for (std::size_t j = 0; j < d.size(); ++j) centered[j] = d[j] - model.mean[j];
  return gemv(model.basis, centered);
}

inline Point normalized_position(Point center, int width, int height) {
  const double hw = width / 2.0, hh = height / 2.0;
  return {(center.x - hw) / hw, (center.y - hh) / hh};
}

// Row k = [pca_apply(ds[k]), nx_k, ny_k], same order as the descriptor set.
inline PatchMatrix embed_image(const DescriptorSet& ds, const PcaModel& model,
                               int width = kCropWidth, int height = kCropHeight) {
  const std::size_t k = model.out_dim();
  PatchMatrix out(ds.size(), k + 2);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto coeffs = pca_apply(model, ds[r].values);
    auto row = out.row(r);
    std::copy(coeffs.begin(), coeffs.end(), row.begin());
    const Point p = normalized_position(ds[r].center, width, height);
    row[k] = p.x;
    row[k + 1] = p.y;
  }
  return out;
}

// Stacks raw descriptor values of several sets into one sample matrix.
inline Matrix pool_descriptors(std::span<const DescriptorSet> sets) {
  std::size_t n = 0, dim = 0;
  for (const auto& s : sets) {
    n += s.size();
    if (s.size() && !dim) dim = s[0].values.size();
  }
  Matrix out(n, dim);
  std::size_t r = 0;
  for (const auto& s : sets)
    for (const auto& d : s.descriptors) {
      require(d.values.size() == dim, "pool_descriptors: mixed descriptor dimensions");
      std::copy(d.values.begin(), d.values.end(), out.row(r++).begin());
    }
  return out;
}

}  // namespace dpm
