#include <gtest/gtest.h>
#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "support/fixtures.hpp"
#include "udscreen/detection.hpp"
#include "udscreen/embedder.hpp"
#include "udscreen/ud_scorer.hpp"

using namespace udscreen;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome cli(const testsupport::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(UDSCREEN_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

}  // namespace

TEST(Cli, StagesChainAndMatchTheWholeRun) {
  testsupport::TempDir dir("cli");
  const auto d = dir.path().string();
  auto o = cli(dir, "synthgen --seed 5 --count 2 --width 1024 --height 1536 --lesions 40 --out " + d + "/img");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(lines(o.out).size(), 2u);
  ASSERT_TRUE(fs::exists(dir / "img/synth5.png"));
  ASSERT_TRUE(fs::exists(dir / "img/synth6.json"));
  const std::string img = d + "/img/synth5.png";

  o = cli(dir, "detect --image " + img + " --out " + d + "/det.jsonl");
  ASSERT_EQ(o.code, 0) << o.err;
  const auto dets = detection::read_detections(dir / "det.jsonl");
  EXPECT_EQ(dets.header.image_id, "synth5");
  EXPECT_GE(dets.lesions.size(), 30u);

  o = cli(dir, "crops --image " + img + " --detections " + d + "/det.jsonl --out " + d + "/crops");
  ASSERT_EQ(o.code, 0) << o.err;
  std::size_t n_crops = 0;
  for (const auto& e : fs::directory_iterator(dir / "crops")) n_crops += e.path().extension() == ".png";
  EXPECT_EQ(n_crops, dets.lesions.size());

  o = cli(dir, "embed --image " + img + " --detections " + d + "/det.jsonl --mode handcrafted --out " + d + "/emb.jsonl");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(read_embeddings(dir / "emb.jsonl").size(), dets.lesions.size());

  o = cli(dir, "embed --crops " + d + "/crops --detections " + d + "/det.jsonl --mode handcrafted --out " + d +
                   "/emb_crops.jsonl");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(read_embeddings(dir / "emb_crops.jsonl").size(), dets.lesions.size());

  o = cli(dir, "score --embeddings " + d + "/emb.jsonl --detections " + d + "/det.jsonl --out " + d + "/scores.jsonl");
  ASSERT_EQ(o.code, 0) << o.err;
  const auto top = lines(o.out);
  EXPECT_EQ(top.size(), 10u);
  EXPECT_EQ(top, top_k_ids(read_scores(dir / "scores.jsonl"), 10));

  o = cli(dir, "run --image " + img + " --out " + d + "/run");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(lines(o.out), top);
  EXPECT_EQ(slurp(dir / "run/detections.jsonl"), slurp(dir / "det.jsonl"));
  EXPECT_EQ(slurp(dir / "run/embeddings.jsonl"), slurp(dir / "emb.jsonl"));
  EXPECT_EQ(slurp(dir / "run/scores.jsonl"), slurp(dir / "scores.jsonl"));
}

TEST(Cli, SelfDistillEmbedHonoursEpochOptions) {
  testsupport::TempDir dir("cli-sd");
  const auto d = dir.path().string();
  ASSERT_EQ(cli(dir, "synthgen --seed 9 --width 1024 --height 1536 --lesions 24 --out " + d).code, 0);
  ASSERT_EQ(cli(dir, "detect --image " + d + "/synth9.png --out " + d + "/det.jsonl").code, 0);
  const auto o = cli(dir, "embed --image " + d + "/synth9.png --detections " + d +
                              "/det.jsonl --mode selfdistill --min-epochs 2 --max-epochs 3 --seed 4 --out " + d +
                              "/emb.jsonl");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("epochs"), std::string::npos);
  const auto e = read_embeddings(dir / "emb.jsonl");
  ASSERT_FALSE(e.empty());
  EXPECT_EQ(e.front().tag, EmbedderTag::selfdistill);
}

TEST(Cli, EvaluateMatchesLibraryReport) {
  testsupport::TempDir dir("cli-eval");
  const auto f = testsupport::make_study_fixture(dir.path(), 11, false);
  const auto o = cli(dir, "evaluate --sessions " + f.sessions_dir.string() + " --scores " + f.scores_dir.string() +
                              " --k-override pt3=9 --out " + (dir / "report").string());
  ASSERT_EQ(o.code, 0) << o.err;
  ReportOptions opts;
  opts.k_overrides = f.k_overrides;
  const auto want = study_report(read_sessions(f.sessions_dir), read_score_dir(f.scores_dir), opts);
  EXPECT_EQ(read_json_file(dir / "report/report.json"), want);
  EXPECT_TRUE(fs::exists(dir / "report/top_u_curves.csv"));
  std::size_t warned = 0;
  for (const auto& l : lines(o.err)) warned += l.rfind("warning: ", 0) == 0;
  EXPECT_EQ(warned, want["warnings"].size());

  const auto bad = cli(dir, "evaluate --sessions " + f.sessions_dir.string() + " --scores " + f.scores_dir.string() +
                                " --k-override pt3 --out " + (dir / "r2").string());
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("PATIENT=K"), std::string::npos);
}

TEST(Cli, ReportsErrors) {
  testsupport::TempDir dir("cli-err");
  EXPECT_NE(cli(dir, "").code, 0);
  EXPECT_NE(cli(dir, "detect --out x.jsonl").code, 0);
  EXPECT_NE(cli(dir, "embed --mode bogus --out x.jsonl").code, 0);
  {
    std::ofstream bad(dir / "broken.png", std::ios::binary);
    bad << "not a png";
  }
  const auto o = cli(dir, "detect --image " + (dir / "broken.png").string() + " --out " + (dir / "d.jsonl").string());
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("error"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "d.jsonl"));
  const auto h = cli(dir, "--help");
  EXPECT_EQ(h.code, 0);
  for (const char* sub : {"synthgen", "detect", "crops", "embed", "score", "run", "evaluate", "serve"}) {
    EXPECT_NE(h.out.find(sub), std::string::npos) << sub;
  }
}
