#pragma once

// Seeded synthetic paired-modality face dataset.
//
// Each subject is a parametric face-like texture: an elliptical face with
// eyes, brows, nose and mouth at subject-specific positions, plus random
// sinusoidal components and Gaussian blobs. Each image applies a small
// similarity jitter, an expression change, brightness/illumination drift
// and sensor noise. The thermal counterpart of a visible image is
//
//   t = 0.5 + p(u,v) * (v^gamma - 0.5)
//   p = 1 - polarity * (1 - falloff * (1 - bump(u,v)))
//   t = blur(t, blur_sigma); t = upsample(downsample(t, factor)); t += N(0, noise_sigma)
//
// where bump is a Gaussian centered on the face. With polarity > 1 the
// contrast is reversed; falloff weakens the reversal away from the face
// center. Keeping polarity * (1 - falloff) > 1 avoids a zero-contrast ring
// whose pixels would carry only quantization noise. Visible renderings get
// N(0, visible_noise_sigma) sensor noise. Landmarks are exact by construction.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "dpm/error.hpp"
#include "dpm/image.hpp"
#include "dpm/manifest.hpp"
#include "dpm/matcher.hpp"
#include "dpm/numerics.hpp"

namespace dpm {

struct SynthSpec {
  std::size_t n_subjects = 40;
  std::size_t images_per_subject = 4;
  double train_fraction = 0.5;
  double gamma = 0.6;
  double blur_sigma = 1.5;
  int downsample = 2;
  double noise_sigma = 0.03;
  double polarity = 2.0;
  double polarity_falloff = 0.25;
  double visible_noise_sigma = 0.01;
  int width = 150;
  int height = 190;
  std::uint64_t seed = 7;

  void validate() const {
    require(n_subjects >= 1, "SynthSpec: n_subjects must be >= 1");
    require(images_per_subject >= 1, "SynthSpec: images_per_subject must be >= 1");
    require(train_fraction >= 0.0 && train_fraction <= 1.0, "SynthSpec: train_fraction must be in [0,1]");
    require(gamma > 0.0, "SynthSpec: gamma must be > 0");
    require(blur_sigma >= 0.0 && noise_sigma >= 0.0, "SynthSpec: sigmas must be >= 0");
    require(downsample >= 1, "SynthSpec: downsample factor must be >= 1");
    require(polarity >= 0.0, "SynthSpec: polarity must be >= 0");
    require(polarity_falloff >= 0.0 && polarity_falloff <= 1.0, "SynthSpec: polarity_falloff must be in [0,1]");
    require(visible_noise_sigma >= 0.0, "SynthSpec: visible_noise_sigma must be >= 0");
    require(width >= kCropWidth && height >= kCropHeight, "SynthSpec: canvas smaller than the crop");
  }
};

struct SynthImage {
  ManifestRow row;
  Image image;
};

struct SynthDataset {
  std::vector<SynthImage> images;   // (subject, image index), visible then thermal
  std::vector<std::uint32_t> train_subjects;
  std::vector<std::uint32_t> test_subjects;

  std::vector<ManifestRow> rows() const {
    std::vector<ManifestRow> out;
    for (const auto& im : images) out.push_back(im.row);
    return out;
  }

  std::vector<ManifestRow> rows_for(const std::vector<std::uint32_t>& subjects) const {
    std::vector<ManifestRow> out;
    for (const auto& im : images)
      if (std::find(subjects.begin(), subjects.end(), im.row.subject) != subjects.end()) out.push_back(im.row);
    return out;
  }
};

namespace synth_detail {

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t x = base;
  std::uint64_t h = Rng::splitmix64(x);
  for (std::uint64_t v : {a, b, c}) {
    x = h ^ (v * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
    h = Rng::splitmix64(x);
  }
  return h;
}

struct Blob {
  double u, v, sigma, amp;
};
struct Wave {
  double fu, fv, phase, amp;
};

// Face frame coordinates coincide with the canonical 110x150 crop frame.
struct SubjectModel {
  double skin;
  Point left_eye, right_eye, mouth;
  double face_rx, face_ry;
  double brow_height, brow_thickness, brow_tilt;
  double mouth_half_width, nose_length;
  double hairline;
  std::vector<Wave> waves;
  std::vector<Blob> blobs;

  explicit SubjectModel(Rng& r) {
    skin = r.uniform(0.5, 0.7);
    const double eye_y = 45.0 + r.uniform(-4.0, 4.0);
    const double half = 25.0 + r.uniform(-4.0, 4.0);
    const double cx = 55.0 + r.uniform(-2.0, 2.0);
    left_eye = {cx - half, eye_y + r.uniform(-1.0, 1.0)};
    right_eye = {cx + half, eye_y + r.uniform(-1.0, 1.0)};
    mouth = {cx + r.uniform(-2.0, 2.0), 120.0 + r.uniform(-6.0, 6.0)};
    face_rx = 48.0 + r.uniform(-5.0, 5.0);
    face_ry = 70.0 + r.uniform(-6.0, 6.0);
    brow_height = 10.0 + r.uniform(-3.0, 3.0);
    brow_thickness = r.uniform(2.0, 4.5);
    brow_tilt = r.uniform(-0.15, 0.15);
    mouth_half_width = r.uniform(11.0, 18.0);
    nose_length = r.uniform(20.0, 34.0);
    hairline = 20.0 + r.uniform(-10.0, 6.0);
    for (int k = 0; k < 8; ++k) {
      const double f = r.uniform(0.03, 0.16), th = r.uniform(0.0, std::numbers::pi);
      waves.push_back({f * std::cos(th), f * std::sin(th), r.uniform(0.0, 2.0 * std::numbers::pi),
                       r.uniform(0.03, 0.07)});
    }
    for (int k = 0; k < 14; ++k) {
      const double a = r.uniform(0.0, 2.0 * std::numbers::pi), rad = std::sqrt(r.uniform()) * 0.85;
      blobs.push_back({55.0 + rad * face_rx * std::cos(a), 80.0 + rad * face_ry * std::sin(a), r.uniform(2.5, 7.0),
                       r.uniform(-0.2, 0.2)});
    }
  }
};

struct Expression {
  double mouth_scale, mouth_open, brow_raise, gain, offset, light_u, light_v;
};

inline double gauss2(double du, double dv, double su, double sv) {
  return std::exp(-0.5 * (du * du / (su * su) + dv * dv / (sv * sv)));
}

inline double render_face(const SubjectModel& s, const Expression& e, double u, double v) {
  const double fu = (u - 55.0) / s.face_rx, fv = (v - 80.0) / s.face_ry;
  const double rr = std::sqrt(fu * fu + fv * fv);
  const double inside = 1.0 / (1.0 + std::exp((rr - 1.0) * 25.0));  // soft ellipse mask
  double face = s.skin;
  for (const auto& w : s.waves) face += w.amp * std::sin(2.0 * std::numbers::pi * (w.fu * u + w.fv * v) + w.phase);
  for (const auto& b : s.blobs) face += b.amp * gauss2(u - b.u, v - b.v, b.sigma, b.sigma);
  // hair above the hairline
  face -= 0.3 / (1.0 + std::exp((v - s.hairline) * 0.6));
  for (const Point& eye : {s.left_eye, s.right_eye}) {
    face -= 0.35 * gauss2(u - eye.x, v - eye.y, 6.0, 3.5);
    const double by = eye.y - s.brow_height - e.brow_raise + s.brow_tilt * (u - eye.x) * (eye.x < 55.0 ? -1.0 : 1.0);
    face -= 0.25 * gauss2(u - eye.x, v - by, 9.0, s.brow_thickness);
  }
  const double nose_top = (s.left_eye.y + s.right_eye.y) / 2.0;
  face -= 0.12 * gauss2(u - s.mouth.x - 3.0, v - (nose_top + s.nose_length * 0.6), 2.5, s.nose_length / 2.5);
  face += 0.10 * gauss2(u - s.mouth.x, v - (nose_top + s.nose_length), 6.0, 3.0);
  face -= 0.3 * gauss2(u - s.mouth.x, v - s.mouth.y, s.mouth_half_width * e.mouth_scale / 1.6, 2.5 + e.mouth_open);
  const double background = 0.25;
  const double light = 1.0 + e.light_u * (u - 55.0) / 55.0 + e.light_v * (v - 80.0) / 80.0;
  return e.offset + e.gain * light * (inside * face + (1.0 - inside) * background);
}

inline Image box_resample(const Image& img, int factor) {
  const int sw = (img.width + factor - 1) / factor, sh = (img.height + factor - 1) / factor;
  Image small(sw, sh);
  for (int y = 0; y < sh; ++y)
    for (int x = 0; x < sw; ++x) {
      double s = 0.0;
      int n = 0;
      for (int j = 0; j < factor; ++j)
        for (int i = 0; i < factor; ++i) {
          const int px = x * factor + i, py = y * factor + j;
          if (px < img.width && py < img.height) s += img.at(px, py), ++n;
        }
      small.at(x, y) = s / n;
    }
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(x, y) = bilinear(small, (x + 0.5) / factor - 0.5, (y + 0.5) / factor - 0.5);
  return out;
}

inline Image quantize(Image img) {
  for (double& v : img.pixels) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return img;
}

}  // namespace synth_detail

// Applies the thermal transform to a visible rendering. `to_face` maps
// source pixels into the face frame, where the polarity bump is defined.
inline Image thermal_transform(const Image& visible, const Similarity& to_face, const SynthSpec& spec, Rng& noise) {
  Image t = visible;
  if (spec.gamma != 1.0 || spec.polarity != 0.0) {
    for (int y = 0; y < t.height; ++y)
      for (int x = 0; x < t.width; ++x) {
        double v = std::clamp(visible.at(x, y), 0.0, 1.0);
        if (spec.gamma != 1.0) v = std::pow(v, spec.gamma);
        if (spec.polarity != 0.0) {
          const Point f = to_face.apply({static_cast<double>(x), static_cast<double>(y)});
          const double bump = synth_detail::gauss2(f.x - 55.0, f.y - 85.0, 30.0, 42.0);
          const double weight = 1.0 - spec.polarity_falloff * (1.0 - bump);
          v = 0.5 + (1.0 - spec.polarity * weight) * (v - 0.5);
        }
        t.at(x, y) = v;
      }
  }
  if (spec.blur_sigma > 0.0) t = gaussian_smooth(t, spec.blur_sigma);
  if (spec.downsample > 1) t = synth_detail::box_resample(t, spec.downsample);
  if (spec.noise_sigma > 0.0)
    for (double& v : t.pixels) v += spec.noise_sigma * noise.normal();
  return synth_detail::quantize(std::move(t));
}

// File names are img/sSSS_iI_{vis,thr}.pgm relative to the dataset root.
inline SynthDataset generate(const SynthSpec& spec, unsigned threads = 1) {
  spec.validate();
  using namespace synth_detail;

  SynthDataset ds;
  std::vector<std::uint32_t> subjects(spec.n_subjects);
  std::iota(subjects.begin(), subjects.end(), 0u);
  Rng split_rng(derive_seed(spec.seed, 0x5b117));
  std::vector<std::uint32_t> shuffled = subjects;
  split_rng.shuffle(shuffled);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * spec.n_subjects));
  ds.train_subjects.assign(shuffled.begin(), shuffled.begin() + n_train);
  ds.test_subjects.assign(shuffled.begin() + n_train, shuffled.end());
  std::sort(ds.train_subjects.begin(), ds.train_subjects.end());
  std::sort(ds.test_subjects.begin(), ds.test_subjects.end());

  const std::size_t n_pairs = spec.n_subjects * spec.images_per_subject;
  ds.images.resize(2 * n_pairs);
  parallel_for(n_pairs, threads, [&](std::size_t pair) {
    const std::uint32_t s = static_cast<std::uint32_t>(pair / spec.images_per_subject);
    const std::size_t i = pair % spec.images_per_subject;
    Rng subject_rng(derive_seed(spec.seed, 1, s));
    const SubjectModel model(subject_rng);
    Rng r(derive_seed(spec.seed, 2, s, i));

    Expression e{};
    e.mouth_scale = 1.0 + r.uniform(-0.15, 0.15);
    e.mouth_open = r.uniform(0.0, 1.5);
    e.brow_raise = r.uniform(-2.0, 2.0);
    e.gain = r.uniform(0.85, 1.15);
    e.offset = r.uniform(-0.08, 0.08);
    e.light_u = r.uniform(-0.12, 0.12);
    e.light_v = r.uniform(-0.08, 0.08);

    // face frame -> source: rotate/scale about the face center, then place
    // the face center at the canvas center with a small offset
    const double angle = r.uniform(-0.12, 0.12), scale = r.uniform(0.92, 1.08);
    Similarity to_src;
    to_src.a = scale * std::cos(angle);
    to_src.b = scale * std::sin(angle);
    const Point c_src{spec.width / 2.0 + r.uniform(-6.0, 6.0), spec.height / 2.0 + r.uniform(-6.0, 6.0)};
    const Point c_rot = to_src.apply({55.0, 80.0});
    to_src.tx = c_src.x - c_rot.x;
    to_src.ty = c_src.y - c_rot.y;
    const Similarity to_face = to_src.inverse();

    Image vis(spec.width, spec.height);
    for (int y = 0; y < vis.height; ++y)
      for (int x = 0; x < vis.width; ++x) {
        const Point f = to_face.apply({static_cast<double>(x), static_cast<double>(y)});
        vis.at(x, y) = render_face(model, e, f.x, f.y) + spec.visible_noise_sigma * r.normal();
      }
    vis = quantize(std::move(vis));
    Image thr = thermal_transform(vis, to_face, spec, r);

    const Landmarks lm{to_src.apply(model.left_eye), to_src.apply(model.right_eye), to_src.apply(model.mouth)};
    char name[64];
    auto row = [&](Modality m) {
      std::snprintf(name, sizeof name, "img/s%03u_i%zu_%s.pgm", s, i, m == Modality::visible ? "vis" : "thr");
      return ManifestRow{name, s, m, static_cast<std::uint32_t>(pair), lm};
    };
    ds.images[2 * pair] = {row(Modality::visible), std::move(vis)};
    ds.images[2 * pair + 1] = {row(Modality::thermal), std::move(thr)};
  });
  return ds;
}

// Writes img/*.pgm plus manifest.csv, train.csv and test.csv under root.
inline void write_dataset(const SynthDataset& ds, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "img");
  for (const auto& im : ds.images) save_pgm(im.image, (root / im.row.path).string());
  save_manifest(root / "manifest.csv", ds.rows());
  save_manifest(root / "train.csv", ds.rows_for(ds.train_subjects));
  save_manifest(root / "test.csv", ds.rows_for(ds.test_subjects));
}

// Naive oracle for identify(): explicit cosine (zero-norm rows score 0),
// per-subject max, lower subject id wins ties.
inline std::uint32_t brute_force_identify(const std::vector<Vector>& gallery,
                                          const std::vector<std::uint32_t>& labels, const Vector& probe) {
  if (gallery.empty()) fail(ErrorKind::contract, "brute_force_identify: empty gallery");
  require(gallery.size() == labels.size(), "brute_force_identify: label count mismatch");
  double pn = 0.0;
  for (double v : probe) pn += v * v;
  pn = std::sqrt(pn);
  std::map<std::uint32_t, double> best;
  for (std::size_t r = 0; r < gallery.size(); ++r) {
    double d = 0.0, gn = 0.0;
    for (std::size_t j = 0; j < probe.size(); ++j) {
      d += gallery[r][j] * probe[j];
      gn += gallery[r][j] * gallery[r][j];
    }
    gn = std::sqrt(gn);
    const double cosine = (gn < 1e-12 || pn < 1e-12) ? 0.0 : d / (gn * pn);
    auto it = best.find(labels[r]);
    if (it == best.end())
      best.emplace(labels[r], cosine);
    else if (cosine > it->second)
      it->second = cosine;
  }
  std::uint32_t winner = best.begin()->first;
  double top = best.begin()->second;
  for (const auto& [subject, score] : best)
    if (score > top) winner = subject, top = score;
  return winner;
}

}  // namespace dpm
