#include <gtest/gtest.h>

#include <sstream>

#include "dpm/pipeline.hpp"
#include "dpm/synth.hpp"
#include "oracles.hpp"

using dpm::Manifest;
using dpm::ManifestRow;
using dpm::Modality;

namespace {

dpm::RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return dpm::parse_config(in);
}

Manifest paired_manifest(std::uint32_t subjects, std::uint32_t per_subject) {
  Manifest m;
  std::uint32_t pair = 0;
  for (std::uint32_t s = 0; s < subjects; ++s)
    for (std::uint32_t i = 0; i < per_subject; ++i, ++pair) {
      const dpm::Landmarks lm{{40, 60}, {90, 60}, {65, 135}};
      m.rows.push_back({"v" + std::to_string(pair) + ".pgm", s, Modality::visible, pair, lm});
      m.rows.push_back({"t" + std::to_string(pair) + ".pgm", s, Modality::thermal, pair, lm});
    }
  return m;
}

// Patch matrices whose entries encode (row, grid index, column).
std::vector<dpm::PatchMatrix> tagged_patches(const Manifest& m, std::size_t per, std::size_t dim) {
  std::vector<dpm::PatchMatrix> out;
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    dpm::PatchMatrix p(per, dim);
    for (std::size_t k = 0; k < per; ++k)
      for (std::size_t c = 0; c < dim; ++c) p(k, c) = 1000.0 * i + 10.0 * k + c;
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST(Config, DefaultsMatchDocumentedValues) {
  const dpm::RunConfig c;
  EXPECT_EQ(c.pca_dim, 64u);
  EXPECT_EQ(c.embed_dim(), 66u);
  EXPECT_EQ(c.dpm.hidden_sizes, (std::vector<std::size_t>{200, 200}));
  EXPECT_EQ(c.dpm.lambda, 1e-4);
  EXPECT_EQ(c.dpm.learning_rate, 0.01);
  EXPECT_EQ(c.dpm.lr_decay, 0.5);
  EXPECT_EQ(c.dpm.lr_decay_every, 10u);
  EXPECT_EQ(c.dpm.epochs, 30u);
  EXPECT_EQ(c.dpm.batch_size, 128u);
  EXPECT_EQ(c.grid.block, 20);
  EXPECT_EQ(c.grid.stride, 8);
  EXPECT_EQ(c.source_modality(), Modality::visible);
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const auto c = parse(
      "# comment\n"
      "seed = 99\n"
      "  dpm.hidden = 50, 40 ,30  # trailing\n"
      "\n"
      "grid.scales=1.0\n"
      "grid.descriptor = hog\n"
      "preprocess.unit_std = false\n"
      "dpm.direction = thermal_to_visible\n");
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.dpm.hidden_sizes, (std::vector<std::size_t>{50, 40, 30}));
  EXPECT_EQ(c.grid.scales, (std::vector<double>{1.0}));
  EXPECT_EQ(c.grid.kind, dpm::DescriptorKind::hog);
  EXPECT_EQ(c.embed_dim(), 38u);
  EXPECT_FALSE(c.preprocess.unit_std);
  EXPECT_EQ(c.source_modality(), Modality::thermal);
  EXPECT_EQ(c.network().seed, 99u);
  EXPECT_EQ(c.synth_spec().seed, 99u);
}

TEST(Config, UnknownKeyRejectedByName) {
  try {
    parse("seed = 1\ndpm.hiden = 10\n");
    FAIL();
  } catch (const dpm::Error& e) {
    EXPECT_EQ(e.kind(), dpm::ErrorKind::usage);
    EXPECT_NE(std::string(e.what()).find("dpm.hiden"), std::string::npos);
  }
}

TEST(Config, MalformedValuesRejected) {
  EXPECT_THROW(parse("seed = abc\n"), dpm::Error);
  EXPECT_THROW(parse("dpm.epochs = 3x\n"), dpm::Error);
  EXPECT_THROW(parse("just a line\n"), dpm::Error);
  EXPECT_THROW(parse("preprocess.unit_std = maybe\n"), dpm::Error);
  EXPECT_THROW(parse("dpm.direction = sideways\n"), dpm::Error);
  EXPECT_THROW(dpm::load_config("/nonexistent/cfg.ini"), dpm::Error);
}

TEST(Manifest, RoundTrip) {
  const auto m = paired_manifest(2, 2);
  std::ostringstream out;
  dpm::write_manifest(out, m.rows);
  std::istringstream in(out.str());
  const auto back = dpm::parse_manifest(in, "/data");
  ASSERT_EQ(back.rows.size(), m.rows.size());
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].path, m.rows[i].path);
    EXPECT_EQ(back.rows[i].subject, m.rows[i].subject);
    EXPECT_EQ(back.rows[i].modality, m.rows[i].modality);
    EXPECT_EQ(back.rows[i].pair_id, m.rows[i].pair_id);
    EXPECT_EQ(back.rows[i].landmarks.mouth, m.rows[i].landmarks.mouth);
  }
  EXPECT_EQ(back.resolve(back.rows[0]), std::filesystem::path("/data/v0.pgm"));
}

TEST(Manifest, MalformedInputReportsLine) {
  std::istringstream bad_header("a,b\n");
  EXPECT_THROW(dpm::parse_manifest(bad_header), dpm::Error);
  std::istringstream short_row(std::string(dpm::kManifestHeader) + "\nx.pgm,1,visible,0,1,2\n");
  try {
    dpm::parse_manifest(short_row);
    FAIL();
  } catch (const dpm::Error& e) {
    EXPECT_EQ(e.kind(), dpm::ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream bad_mod(std::string(dpm::kManifestHeader) + "\nx.pgm,1,infrared,0,1,2,3,4,5,6\n");
  EXPECT_THROW(dpm::parse_manifest(bad_mod), dpm::Error);
}

TEST(Pipeline, GalleryPolicySelectsFirstImagesPerSubject) {
  const auto m = paired_manifest(3, 4);
  const auto one = dpm::select_gallery(m, Modality::visible, dpm::GalleryPolicy::one);
  EXPECT_EQ(one, (std::vector<std::size_t>{0, 8, 16}));
  const auto two = dpm::select_gallery(m, Modality::visible, dpm::GalleryPolicy::two);
  EXPECT_EQ(two, (std::vector<std::size_t>{0, 2, 8, 10, 16, 18}));
  EXPECT_EQ(dpm::select_gallery(m, Modality::thermal, dpm::GalleryPolicy::all).size(), 12u);
  EXPECT_EQ(dpm::parse_gallery_policy("2"), dpm::GalleryPolicy::two);
  EXPECT_THROW(dpm::parse_gallery_policy("three"), dpm::Error);
}

TEST(Pipeline, TrainingPairsAlignGridPositions) {
  const auto m = paired_manifest(2, 2);
  const auto patches = tagged_patches(m, 5, 3);
  dpm::Rng rng(1);
  const auto p = dpm::make_training_pairs(m, patches, Modality::visible, 1000, rng);
  ASSERT_EQ(p.inputs.rows(), 4u * 5u);
  for (std::size_t r = 0; r < p.inputs.rows(); ++r) {
    const std::size_t src = r / 5 * 2, k = r % 5;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(p.inputs(r, c), patches[src](k, c));
      EXPECT_EQ(p.targets(r, c), patches[src + 1](k, c));
    }
  }
  const auto reversed = dpm::make_training_pairs(m, patches, Modality::thermal, 1000, rng);
  EXPECT_EQ(reversed.inputs(0, 0), patches[1](0, 0));
  EXPECT_EQ(reversed.targets(0, 0), patches[0](0, 0));
}

TEST(Pipeline, TrainingPairsSubsampleAndValidate) {
  auto m = paired_manifest(2, 2);
  const auto patches = tagged_patches(m, 5, 3);
  dpm::Rng rng(2);
  const auto p = dpm::make_training_pairs(m, patches, Modality::visible, 7, rng);
  EXPECT_EQ(p.inputs.rows(), 7u);
  for (std::size_t r = 0; r < 7; ++r) EXPECT_EQ(p.targets(r, 0) - p.inputs(r, 0), 1000.0);

  m.rows[1].subject = 1;
  EXPECT_THROW(dpm::make_training_pairs(m, patches, Modality::visible, 7, rng), dpm::Error);
  Manifest lonely;
  lonely.rows.push_back(paired_manifest(1, 1).rows[0]);
  EXPECT_THROW(dpm::make_training_pairs(lonely, {patches[0]}, Modality::visible, 7, rng), dpm::Error);
}

TEST(Pipeline, MappingOnlyAppliedToSourceModality) {
  dpm::DpmConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_sizes = {4};
  const auto net = dpm::init_glorot(cfg);
  dpm::PatchMatrix p(2, 3, {0.1, 0.2, 0.3, -0.1, 0.5, 0.0});
  EXPECT_EQ(dpm::vector_from_patches(p, Modality::thermal, &net, Modality::visible), dpm::l2_normalize(p.data()));
  EXPECT_EQ(dpm::vector_from_patches(p, Modality::visible, &net, Modality::visible),
            dpm::l2_normalize(dpm::map_batch(net, p).data()));
}

TEST(Pipeline, ProbesExcludeEnrolledRows) {
  const auto m = paired_manifest(2, 2);
  const auto patches = tagged_patches(m, 2, 2);
  const auto probes = dpm::probes_from_patches(m, patches, Modality::visible, nullptr, Modality::visible, {0, 4});
  ASSERT_EQ(probes.size(), 2u);
  EXPECT_EQ(probes[0].image_id, 2u);
  EXPECT_EQ(probes[1].image_id, 6u);
  const auto g = dpm::gallery_from_patches(m, patches, {1, 5}, nullptr, Modality::visible);
  EXPECT_EQ(g.labels, (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(g.image_ids, (std::vector<std::uint32_t>{1, 5}));
}

TEST(Config, ShippedDefaultFileMatchesBuiltins) {
  const auto f = dpm::load_config(std::string(DPM_CONFIG_DIR) + "/default.cfg");
  const dpm::RunConfig d;
  EXPECT_EQ(f.seed, d.seed);
  EXPECT_EQ(f.threads, d.threads);
  const auto &fs = f.synth, &ds = d.synth;
  EXPECT_EQ(fs.n_subjects, ds.n_subjects);
  EXPECT_EQ(fs.images_per_subject, ds.images_per_subject);
  EXPECT_EQ(fs.train_fraction, ds.train_fraction);
  EXPECT_EQ(fs.width, ds.width);
  EXPECT_EQ(fs.height, ds.height);
  EXPECT_EQ(fs.gamma, ds.gamma);
  EXPECT_EQ(fs.blur_sigma, ds.blur_sigma);
  EXPECT_EQ(fs.downsample, ds.downsample);
  EXPECT_EQ(fs.noise_sigma, ds.noise_sigma);
  EXPECT_EQ(fs.visible_noise_sigma, ds.visible_noise_sigma);
  EXPECT_EQ(fs.polarity, ds.polarity);
  EXPECT_EQ(fs.polarity_falloff, ds.polarity_falloff);
  EXPECT_EQ(f.preprocess.dog_inner, d.preprocess.dog_inner);
  EXPECT_EQ(f.preprocess.dog_outer, d.preprocess.dog_outer);
  EXPECT_EQ(f.preprocess.unit_std, d.preprocess.unit_std);
  EXPECT_EQ(f.preprocess.median_on_thermal, d.preprocess.median_on_thermal);
  EXPECT_EQ(f.grid.block, d.grid.block);
  EXPECT_EQ(f.grid.stride, d.grid.stride);
  EXPECT_EQ(f.grid.scales, d.grid.scales);
  EXPECT_EQ(f.grid.kind, d.grid.kind);
  EXPECT_EQ(f.pca_dim, d.pca_dim);
  EXPECT_EQ(f.pca_max_samples, d.pca_max_samples);
  EXPECT_EQ(f.max_train_pairs, d.max_train_pairs);
  EXPECT_EQ(f.dpm.hidden_sizes, d.dpm.hidden_sizes);
  EXPECT_EQ(f.dpm.lambda, d.dpm.lambda);
  EXPECT_EQ(f.dpm.learning_rate, d.dpm.learning_rate);
  EXPECT_EQ(f.dpm.lr_decay, d.dpm.lr_decay);
  EXPECT_EQ(f.dpm.lr_decay_every, d.dpm.lr_decay_every);
  EXPECT_EQ(f.dpm.epochs, d.dpm.epochs);
  EXPECT_EQ(f.dpm.batch_size, d.dpm.batch_size);
  EXPECT_EQ(f.direction, d.direction);
}
