#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpm/dpm.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "dpm_cli_test";

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args) {
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(DPM_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, oracle::read_bytes(out), oracle::read_bytes(err)};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(oracle::read_bytes(e.path()), oracle::read_bytes(b / rel)) << rel;
    ++n;
  }
  EXPECT_GT(n, 0u);
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    std::ofstream(kRoot / "small.cfg") << "# small end-to-end run\n"
                                          "seed = 5\n"
                                          "synth.n_subjects = 6\n"
                                          "synth.images_per_subject = 2\n"
                                          "dpm.hidden = 24, 24\n"
                                          "dpm.epochs = 3\n"
                                          "train.max_pairs = 3000\n";
    ASSERT_EQ(cli("synth --config " + cfg() + " --out " + (kRoot / "data").string()).code, 0);
    const CliResult train = cli("train --config " + cfg() + " --manifest " + (kRoot / "data/train.csv").string() +
                          " --out " + (kRoot / "models").string());
    ASSERT_EQ(train.code, 0) << train.err;
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }

  static std::string cfg() { return (kRoot / "small.cfg").string(); }
  static std::string p(const std::string& rel) { return (kRoot / rel).string(); }
};

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
  ASSERT_EQ(cli("synth --config " + cfg() + " --out " + p("data2")).code, 0);
  expect_same_tree(kRoot / "data", kRoot / "data2");
  const auto m = dpm::load_manifest(kRoot / "data/manifest.csv");
  EXPECT_EQ(m.rows.size(), 24u);
  EXPECT_EQ(dpm::load_manifest(kRoot / "data/train.csv").rows.size(), 12u);
}

TEST_F(Cli, BadConfigKeyNamedInError) {
  std::ofstream(kRoot / "bad.cfg") << "dpm.epochz = 3\n";
  const CliResult r = cli("synth --config " + p("bad.cfg") + " --out " + p("never"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("dpm.epochz"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(kRoot / "never"));
}

TEST_F(Cli, TrainWritesArtifactsAndIsDeterministic) {
  for (const char* f : {"pca.bin", "dpm.bin", "train_report.csv"}) EXPECT_TRUE(fs::exists(kRoot / "models" / f)) << f;
  const std::string report = oracle::read_bytes(kRoot / "models/train_report.csv");
  EXPECT_EQ(report.rfind("epoch,loss\n", 0), 0u);
  EXPECT_EQ(count_lines(report), 4u);
  ASSERT_EQ(cli("train --config " + cfg() + " --manifest " + p("data/train.csv") + " --out " + p("models2")).code, 0);
  expect_same_tree(kRoot / "models", kRoot / "models2");
  EXPECT_EQ(dpm::load_dpm(kRoot / "models/dpm.bin").depth(), 2u);
}

TEST_F(Cli, GalleryPoliciesAndDeterminism) {
  const std::string base = "build-gallery --config " + cfg() + " --manifest " + p("data/test.csv") + " --models " + p("models");
  ASSERT_EQ(cli(base + " --gallery-policy one --out " + p("g1.bin")).code, 0);
  ASSERT_EQ(cli(base + " --gallery-policy all --out " + p("gall.bin")).code, 0);
  ASSERT_EQ(cli(base + " --gallery-policy one --out " + p("g1b.bin")).code, 0);
  ASSERT_EQ(cli(base + " --gallery-policy one --baseline --out " + p("gbase.bin")).code, 0);
  EXPECT_EQ(dpm::load_gallery(kRoot / "g1.bin").size(), 3u);
  EXPECT_EQ(dpm::load_gallery(kRoot / "gall.bin").size(), 6u);
  EXPECT_EQ(dpm::load_gallery(kRoot / "g1.bin").dim(), 408u * 66u);
  EXPECT_EQ(oracle::read_bytes(kRoot / "g1.bin"), oracle::read_bytes(kRoot / "g1b.bin"));
  EXPECT_NE(oracle::read_bytes(kRoot / "g1.bin"), oracle::read_bytes(kRoot / "gbase.bin"));
  EXPECT_EQ(cli(base + " --gallery-policy three --out " + p("gx.bin")).code, 1);
}

TEST_F(Cli, MatchSingleAndBatch) {
  ASSERT_EQ(cli("build-gallery --config " + cfg() + " --manifest " + p("data/test.csv") + " --models " + p("models") +
                " --out " + p("gm.bin"))
                .code,
            0);
  const auto m = dpm::load_manifest(kRoot / "data/test.csv");
  const auto& probe = m.rows[1];
  ASSERT_EQ(probe.modality, dpm::Modality::thermal);
  const auto& l = probe.landmarks;
  std::ostringstream lm;
  lm.precision(17);
  lm << l.left_eye.x << ',' << l.left_eye.y << ',' << l.right_eye.x << ',' << l.right_eye.y << ',' << l.mouth.x << ','
     << l.mouth.y;
  const std::string base = "match --config " + cfg() + " --gallery " + p("gm.bin") + " --models " + p("models");
  const CliResult single = cli(base + " --probe " + m.resolve(probe).string() + " --landmarks " + lm.str() +
                          " --top-k 2 --timing");
  ASSERT_EQ(single.code, 0) << single.err;
  EXPECT_EQ(single.out.rfind("rank,subject,score\n1,", 0), 0u) << single.out;
  EXPECT_EQ(count_lines(single.out), 3u);
  EXPECT_NE(single.err.find("ms/probe"), std::string::npos);

  const CliResult batch = cli(base + " --manifest " + p("data/test.csv") + " --timing");
  ASSERT_EQ(batch.code, 0) << batch.err;
  EXPECT_EQ(count_lines(batch.out), 1u + m.rows.size() / 2);
  EXPECT_EQ(batch.out.rfind("probe,path,subject,top1,score,ms\n", 0), 0u);
}

TEST_F(Cli, EvalModes) {
  const std::string gal = "build-gallery --config " + cfg() + " --manifest " + p("data/test.csv") + " --models " +
                          p("models") + " --gallery-policy one";
  ASSERT_EQ(cli(gal + " --out " + p("ge.bin")).code, 0);
  ASSERT_EQ(cli(gal + " --baseline --out " + p("geb.bin")).code, 0);
  const std::string ev = "eval --config " + cfg() + " --manifest " + p("data/test.csv") + " --models " + p("models");

  const CliResult c = cli(ev + " --gallery " + p("ge.bin") + " --mode cmc --out " + p("dpm.csv"));
  ASSERT_EQ(c.code, 0) << c.err;
  const std::string cmc = oracle::read_bytes(kRoot / "dpm.csv");
  EXPECT_EQ(cmc.rfind("rank,accuracy\n1,", 0), 0u);
  EXPECT_EQ(count_lines(cmc), 4u);

  const CliResult r = cli(ev + " --gallery " + p("ge.bin") + " --mode roc");
  ASSERT_EQ(r.code, 0) << r.err;
  // 6 thermal probes against 3 gallery rows of 3 subjects
  EXPECT_NE(r.err.find("genuine=6 impostor=12"), std::string::npos) << r.err;
  EXPECT_EQ(r.out.rfind("threshold,fpr,tpr\n-inf,1,1\n", 0), 0u);

  ASSERT_EQ(cli(ev + " --gallery " + p("geb.bin") + " --baseline --mode cmc --out " + p("base.csv")).code, 0);
  ASSERT_EQ(cli(ev + " --gallery " + p("geb.bin") + " --baseline --modality visible --mode cmc --out " +
                p("within.csv"))
                .code,
            0);
  std::ofstream(kRoot / "w.csv") << "rank,accuracy\n1,0.9\n2,1\n";
  std::ofstream(kRoot / "b.csv") << "rank,accuracy\n1,0.3\n2,1\n";
  std::ofstream(kRoot / "d.csv") << "rank,accuracy\n1,0.6\n2,1\n";
  const CliResult g = cli("eval --mode gap --runs " + p("w.csv") + "," + p("b.csv") + "," + p("d.csv"));
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_NE(g.out.find("gap_bridged_percent=50"), std::string::npos) << g.out;
  const CliResult degenerate = cli("eval --mode gap --runs " + p("b.csv") + "," + p("b.csv") + "," + p("d.csv"));
  EXPECT_EQ(degenerate.code, 2);
}

TEST_F(Cli, BenchReportsBothThreadingModes) {
  ASSERT_EQ(cli("build-gallery --config " + cfg() + " --manifest " + p("data/test.csv") + " --models " + p("models") +
                " --out " + p("gb.bin"))
                .code,
            0);
  const CliResult b = cli("bench --config " + cfg() + " --threads 2 --probes 100 --gallery " + p("gb.bin") + " --models " +
                    p("models") + " --manifest " + p("data/test.csv"));
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* key : {"probes=100", "single_thread_ms_per_probe=", "multi_thread_probes_per_sec=",
                          "end_to_end_probes_per_sec="})
    EXPECT_NE(b.out.find(key), std::string::npos) << key;
}

TEST_F(Cli, ExtractDumpsDescriptors) {
  const auto m = dpm::load_manifest(kRoot / "data/test.csv");
  const auto& l = m.rows[0].landmarks;
  std::ostringstream lm;
  lm.precision(17);
  lm << l.left_eye.x << ',' << l.left_eye.y << ',' << l.right_eye.x << ',' << l.right_eye.y << ',' << l.mouth.x << ','
     << l.mouth.y;
  ASSERT_EQ(cli("extract --image " + m.resolve(m.rows[0]).string() + " --landmarks " + lm.str() + " --out " +
                p("d.dsc"))
                .code,
            0);
  EXPECT_EQ(dpm::load_descriptors(kRoot / "d.dsc").size(), 408u);
  ASSERT_EQ(cli("extract --descriptor hog --image " + m.resolve(m.rows[0]).string() + " --landmarks " + lm.str() +
                " --out " + p("h.dsc"))
                .code,
            0);
  EXPECT_EQ(dpm::load_descriptors(kRoot / "h.dsc")[0].values.size(), 36u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("train --bogus-flag").code, 1);
  EXPECT_EQ(cli("train --manifest " + p("missing.csv") + " --out " + p("x")).code, 2);
  std::string pca = oracle::read_bytes(kRoot / "models/pca.bin");
  pca[16 + 8 * 128 + 6] ^= 0x10;  // doubles or halves the first basis entry
  fs::create_directories(kRoot / "corrupt");
  oracle::write_bytes(kRoot / "corrupt/pca.bin", pca);
  const CliResult r = cli("build-gallery --baseline --manifest " + p("data/test.csv") + " --models " + p("corrupt") +
                    " --out " + p("gc.bin"));
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("PCA invariant"), std::string::npos) << r.err;
}
