// Command-line driver: synth, train, build-gallery, match, eval, bench, extract.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "dpm/dpm.hpp"

namespace fs = std::filesystem;
using namespace dpm;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string descriptor;

  RunConfig load() const {
    RunConfig c = config.empty() ? RunConfig{} : load_config(config);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) fail(ErrorKind::usage, "--set expects key=value, got '" + kv + "'");
      apply_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    if (!descriptor.empty()) c.grid.kind = parse_descriptor_kind(descriptor);
    return c;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value configuration file");
  sub->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
  sub->add_option("--seed", c.seed, "seed, overrides the config");
  sub->add_option("--threads", c.threads, "worker threads");
  sub->add_option("--descriptor", c.descriptor, "sift or hog")->check(CLI::IsMember({"sift", "hog"}));
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) fail(ErrorKind::io, p.string() + ": cannot open for writing");
  return out;
}

Landmarks parse_landmarks(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(detail::parse_f64(item, "--landmarks"));
  if (v.size() != 6) fail(ErrorKind::usage, "--landmarks expects lex,ley,rex,rey,mx,my");
  return {{v[0], v[1]}, {v[2], v[3]}, {v[4], v[5]}};
}

struct Models {
  PcaModel pca;
  std::optional<DpmModel> dpm;
};

Models load_models(const fs::path& dir, bool need_dpm) {
  Models m{load_pca(dir / "pca.bin"), std::nullopt};
  if (need_dpm) m.dpm = load_dpm(dir / "dpm.bin");
  return m;
}

Vector encode_one(const Image& img, const Landmarks& lm, Modality mod, const Models& models, const RunConfig& cfg) {
  const auto patches = encode_patches(img, lm, mod, models.pca, cfg.encode());
  return vector_from_patches(patches, mod, models.dpm ? &*models.dpm : nullptr, cfg.source_modality());
}

std::vector<double> read_cmc_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorKind::io, p.string() + ": cannot open");
  std::string line;
  std::getline(in, line);
  if (line != "rank,accuracy") fail(ErrorKind::format, p.string() + ": not a CMC CSV");
  std::vector<double> acc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorKind::format, p.string() + ": malformed row '" + line + "'");
    acc.push_back(std::stod(line.substr(comma + 1)));
  }
  if (acc.empty()) fail(ErrorKind::format, p.string() + ": no rows");
  return acc;
}

// ------------------------------------------------------------- commands

void cmd_synth(const RunConfig& cfg, const fs::path& out) {
  const auto ds = generate(cfg.synth_spec(), cfg.threads);
  write_dataset(ds, out);
  log_line("synth: " + std::to_string(ds.images.size()) + " images written to " + out.string());
}

void cmd_train(const RunConfig& cfg, const fs::path& manifest, const fs::path& out) {
  const auto m = load_manifest(manifest);
  const auto t0 = Clock::now();
  const auto models = train_pipeline(m, cfg, log_line);
  fs::create_directories(out);
  save(models.pca, out / "pca.bin");
  save(models.dpm, out / "dpm.bin");
  auto csv = open_out(out / "train_report.csv");
  csv.precision(17);
  csv << "epoch,loss\n";
  for (std::size_t e = 0; e < models.report.epoch_loss.size(); ++e) csv << e + 1 << ',' << models.report.epoch_loss[e] << '\n';
  log_line("train: done in " + std::to_string(ms_since(t0) / 1000.0) + " s, final loss " +
           std::to_string(models.report.final_loss));
}

void cmd_build_gallery(const RunConfig& cfg, const fs::path& manifest, const fs::path& models_dir,
                       const std::string& policy, const std::string& modality, bool baseline, const fs::path& out) {
  const auto m = load_manifest(manifest);
  const Modality mod = parse_modality(modality);
  const Models models = load_models(models_dir, !baseline);
  const auto rows = select_gallery(m, mod, parse_gallery_policy(policy));
  if (rows.empty()) fail(ErrorKind::protocol, "build-gallery: no " + modality + " rows in manifest");
  const auto patches = encode_rows(m, rows, models.pca, cfg.encode(), cfg.threads);
  const auto g = gallery_from_patches(m, patches, rows, models.dpm ? &*models.dpm : nullptr, cfg.source_modality(),
                                      cfg.threads);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save(g, out);
  log_line("build-gallery: " + std::to_string(g.size()) + " rows, D=" + std::to_string(g.dim()));
}

struct MatchArgs {
  std::string gallery, models, probe, landmarks, manifest, modality = "thermal", out;
  std::size_t top_k = 5;
  bool timing = false, baseline = false;
};

void cmd_match(const RunConfig& cfg, const MatchArgs& a) {
  const auto g = load_gallery(a.gallery);
  const Modality mod = parse_modality(a.modality);
  const Models models = load_models(a.models, !a.baseline);
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  std::ostream& out = a.out.empty() ? std::cout : file;
  out.precision(10);

  if (!a.probe.empty()) {
    if (a.landmarks.empty()) fail(ErrorKind::usage, "match: --probe requires --landmarks");
    const auto t0 = Clock::now();
    const auto res = identify(g, encode_one(load_pgm(a.probe), parse_landmarks(a.landmarks), mod, models, cfg));
    const double ms = ms_since(t0);
    out << "rank,subject,score\n";
    for (std::size_t i = 0; i < std::min(a.top_k, res.ranked.size()); ++i)
      out << i + 1 << ',' << res.ranked[i].subject << ',' << res.ranked[i].score << '\n';
    if (a.timing) std::fprintf(stderr, "match: %.3f ms/probe\n", ms);
    return;
  }
  if (a.manifest.empty()) fail(ErrorKind::usage, "match: give --probe or --manifest");
  const auto m = load_manifest(a.manifest);
  out << "probe,path,subject,top1,score" << (a.timing ? ",ms" : "") << '\n';
  double total_ms = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    const auto& r = m.rows[i];
    if (r.modality != mod) continue;
    const auto t0 = Clock::now();
    const auto res = identify(g, encode_one(load_pgm(m.resolve(r).string()), r.landmarks, mod, models, cfg));
    const double ms = ms_since(t0);
    total_ms += ms;
    ++n;
    out << i << ',' << r.path << ',' << r.subject << ',' << res.best() << ',' << res.ranked.front().score;
    if (a.timing) out << ',' << ms;
    out << '\n';
  }
  if (a.timing && n) std::fprintf(stderr, "match: %zu probes, %.3f ms/probe\n", n, total_ms / n);
}

struct EvalArgs {
  std::string gallery, models, manifest, mode = "cmc", modality = "thermal", out;
  std::vector<std::string> runs;
  bool baseline = false;
};

void cmd_eval(const RunConfig& cfg, const EvalArgs& a) {
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  std::ostream& out = a.out.empty() ? std::cout : file;

  if (a.mode == "gap") {
    if (a.runs.size() != 3) fail(ErrorKind::usage, "eval --mode gap needs --runs within.csv,baseline.csv,dpm.csv");
    const CmcCurve w{read_cmc_csv(a.runs[0])}, b{read_cmc_csv(a.runs[1])}, d{read_cmc_csv(a.runs[2])};
    write_gap_report(out, modality_gap_report(w, b, d));
    return;
  }
  if (a.gallery.empty() || a.models.empty() || a.manifest.empty())
    fail(ErrorKind::usage, "eval: --gallery, --models and --manifest are required");
  const auto g = load_gallery(a.gallery);
  const auto m = load_manifest(a.manifest);
  const Modality mod = parse_modality(a.modality);
  const Models models = load_models(a.models, !a.baseline);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < m.rows.size(); ++i)
    if (m.rows[i].modality == mod) rows.push_back(i);
  const auto patches = encode_rows(m, rows, models.pca, cfg.encode(), cfg.threads);
  const auto probes = probes_from_patches(m, patches, mod, models.dpm ? &*models.dpm : nullptr,
                                          cfg.source_modality(), g.image_ids, cfg.threads);
  if (a.mode == "cmc") {
    const auto c = cmc(g, probes);
    write_cmc_csv(out, c);
    log_line("eval: rank-1 " + std::to_string(c.rank1()) + " over " + std::to_string(probes.size()) + " probes");
  } else if (a.mode == "roc") {
    const auto c = roc(g, probes);
    write_roc_csv(out, c);
    log_line("eval: genuine=" + std::to_string(c.genuine) + " impostor=" + std::to_string(c.impostor) +
             " auc=" + std::to_string(auc(c)));
  } else {
    fail(ErrorKind::usage, "eval: unknown mode '" + a.mode + "' (expected cmc, roc or gap)");
  }
}

struct BenchArgs {
  std::string gallery, models, manifest;
  std::size_t probes = 200;
};

void cmd_bench(const RunConfig& cfg, const BenchArgs& a) {
  const auto g = load_gallery(a.gallery);
  Rng rng(synth_detail::derive_seed(cfg.seed, 0xbe7c));
  std::vector<Vector> probes(std::max<std::size_t>(a.probes, 100));
  for (auto& p : probes) {
    p.resize(g.dim());
    for (double& v : p) v = rng.normal();
    p = l2_normalize(p);
  }
  std::uint64_t sink = 0;

  auto t0 = Clock::now();
  for (const auto& p : probes) sink += identify(g, p).best();
  const double single = ms_since(t0) / probes.size();

  const unsigned threads = std::max(1u, cfg.threads);
  std::vector<std::uint32_t> best(probes.size());
  t0 = Clock::now();
  parallel_for(probes.size(), threads, [&](std::size_t i) { best[i] = identify(g, probes[i]).best(); });
  const double multi = ms_since(t0) / probes.size();
  for (auto b : best) sink += b;

  std::printf("gallery_rows=%zu\ndim=%zu\nprobes=%zu\n", g.size(), g.dim(), probes.size());
  std::printf("single_thread_ms_per_probe=%.4f\nsingle_thread_probes_per_sec=%.1f\n", single, 1000.0 / single);
  std::printf("threads=%u\nmulti_thread_ms_per_probe=%.4f\nmulti_thread_probes_per_sec=%.1f\n", threads, multi,
              1000.0 / multi);
  if (single >= 50.0) std::fprintf(stderr, "warning: %.2f ms/probe exceeds the 50 ms target\n", single);

  if (!a.manifest.empty()) {
    const auto m = load_manifest(a.manifest);
    const Models models = load_models(a.models, false);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < m.rows.size(); ++i)
      if (m.rows[i].modality == Modality::thermal) rows.push_back(i);
    std::vector<Image> images;
    for (auto i : rows) images.push_back(load_pgm(m.resolve(m.rows[i]).string()));
    t0 = Clock::now();
    for (std::size_t k = 0; k < rows.size(); ++k)
      sink += identify(g, encode_one(images[k], m.rows[rows[k]].landmarks, Modality::thermal, models, cfg)).best();
    const double e2e = ms_since(t0) / std::max<std::size_t>(rows.size(), 1);
    std::printf("end_to_end_probes=%zu\nend_to_end_ms_per_probe=%.3f\nend_to_end_probes_per_sec=%.1f\n", rows.size(),
                e2e, 1000.0 / e2e);
  }
  std::fprintf(stderr, "bench: checksum %llu\n", static_cast<unsigned long long>(sink));
}

void cmd_extract(const RunConfig& cfg, const std::string& image, const std::string& landmarks,
                 const std::string& modality, const fs::path& out) {
  const Image crop = preprocess(load_pgm(image), parse_landmarks(landmarks), parse_modality(modality), cfg.preprocess);
  const auto ds = extract_dense(crop, cfg.grid, image);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save(ds, out);
  log_line("extract: " + std::to_string(ds.size()) + " descriptors of dim " + std::to_string(descriptor_dim(cfg.grid.kind)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thermal-to-visible face matching with a learned patch mapping"};
  app.require_subcommand(1);
  Common common;
  std::string out, manifest, models, policy = "one", modality = "visible", image, landmarks;
  bool baseline = false;
  MatchArgs match;
  EvalArgs eval;
  BenchArgs bench;

  auto* synth = app.add_subcommand("synth", "generate the seeded synthetic paired dataset");
  add_common(synth, common);
  synth->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "fit PCA and train the mapping network");
  add_common(train, common);
  train->add_option("--manifest", manifest, "training manifest")->required();
  train->add_option("--out", out, "model directory")->required();

  auto* gallery = app.add_subcommand("build-gallery", "encode and store the gallery");
  add_common(gallery, common);
  gallery->add_option("--manifest", manifest, "manifest with gallery images")->required();
  gallery->add_option("--models", models, "model directory from train")->required();
  gallery->add_option("--out", out, "gallery file")->required();
  gallery->add_option("--gallery-policy", policy, "images per subject: one, two or all");
  gallery->add_option("--modality", modality, "gallery modality");
  gallery->add_flag("--baseline", baseline, "skip the mapping network");

  auto* matchc = app.add_subcommand("match", "identify probes against a gallery");
  add_common(matchc, common);
  matchc->add_option("--gallery", match.gallery, "gallery file from build-gallery")->required();
  matchc->add_option("--models", match.models, "model directory from train")->required();
  matchc->add_option("--probe", match.probe, "single probe image");
  matchc->add_option("--landmarks", match.landmarks, "lex,ley,rex,rey,mx,my for --probe");
  matchc->add_option("--manifest", match.manifest, "batch mode: every row of --modality");
  matchc->add_option("--modality", match.modality, "probe modality");
  matchc->add_option("--top-k", match.top_k, "number of ranked candidates per probe");
  matchc->add_option("--out", match.out, "CSV output (default stdout)");
  matchc->add_flag("--timing", match.timing, "report per-probe milliseconds");
  matchc->add_flag("--baseline", match.baseline, "skip the mapping network");

  auto* evalc = app.add_subcommand("eval", "CMC, ROC or modality-gap evaluation");
  add_common(evalc, common);
  evalc->add_option("--mode", eval.mode, "evaluation to run")->check(CLI::IsMember({"cmc", "roc", "gap"}));
  evalc->add_option("--gallery", eval.gallery, "gallery file (cmc, roc)");
  evalc->add_option("--models", eval.models, "model directory (cmc, roc)");
  evalc->add_option("--manifest", eval.manifest, "probe manifest");
  evalc->add_option("--modality", eval.modality, "probe modality");
  evalc->add_option("--runs", eval.runs, "gap mode: within, baseline and mapped CMC CSVs")->delimiter(',');
  evalc->add_option("--out", eval.out, "output file (default stdout)");
  evalc->add_flag("--baseline", eval.baseline, "skip the mapping network");

  auto* benchc = app.add_subcommand("bench", "scoring throughput");
  add_common(benchc, common);
  benchc->add_option("--gallery", bench.gallery, "gallery file")->required();
  benchc->add_option("--models", bench.models, "needed with --manifest");
  benchc->add_option("--manifest", bench.manifest, "also time extraction on its thermal rows");
  benchc->add_option("--probes", bench.probes, "random probes (at least 100)");

  auto* extract = app.add_subcommand("extract", "dump dense descriptors of one image");
  add_common(extract, common);
  extract->add_option("--image", image, "PGM image")->required();
  extract->add_option("--landmarks", landmarks, "lex,ley,rex,rey,mx,my")->required();
  extract->add_option("--modality", modality, "visible or thermal");
  extract->add_option("--out", out, "descriptor file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const RunConfig cfg = common.load();
    if (*synth) cmd_synth(cfg, out);
    if (*train) cmd_train(cfg, manifest, out);
    if (*gallery) cmd_build_gallery(cfg, manifest, models, policy, modality, baseline, out);
    if (*matchc) cmd_match(cfg, match);
    if (*evalc) cmd_eval(cfg, eval);
    if (*benchc) {
      if (!bench.manifest.empty() && bench.models.empty()) fail(ErrorKind::usage, "bench: --manifest needs --models");
      cmd_bench(cfg, bench);
    }
    if (*extract) cmd_extract(cfg, image, landmarks, modality, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
