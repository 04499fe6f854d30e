#include "cli_runner.hpp"
#include "psgan/inference.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <json.hpp>

using namespace psgan;
using psgan::testing::run_cli;
using psgan::testing::slurp;
using psgan::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyConfig =
    "image_size = 64\n"
    "base_width = 4\n"
    "disc_width = 4\n"
    "max_steps = 2\n"
    "checkpoint_interval = 1000\n"
    "seed = 5\n";

/// Fixtures plus a two-step model, shared by every case.
struct Workspace {
  TempDir dir{"cli"};
  std::filesystem::path fixtures = dir / "fx";
  std::filesystem::path manifest = fixtures / "manifest.jsonl";
  std::filesystem::path config = dir / "tiny.cfg";
  std::filesystem::path checkpoint = dir / "run" / "final.ckpt";
  int fixtures_rc = -1, train_rc = -1;
  std::string train_output;

  Workspace() {
    fixtures_rc = run_cli("make-fixtures --out " + fixtures.string() + " --size 64 --pairs 2 --seed 1", dir.path()).code;
    write_text(config, kTinyConfig);
    auto r = run_cli("train --config " + config.string() + " --manifest " + manifest.string() + " --out " +
                         (dir / "run").string(),
                     dir.path());
    train_rc = r.code;
    train_output = r.output;
  }
  // Asset ids written by make-fixtures.
  std::string plain(int i) const { return (fixtures / ("plain_" + std::to_string(i))).string(); }
  std::string makeup(int i) const { return (fixtures / ("makeup_" + std::to_string(i))).string(); }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

std::string transfer_args(const std::string& extra, const std::filesystem::path& out) {
  return "transfer --checkpoint " + ws().checkpoint.string() + " --source " + ws().plain(1) + " " + extra +
         " --out " + out.string();
}

}  // namespace

TEST_CASE("make-fixtures and train") {
  REQUIRE(ws().fixtures_rc == 0);
  CHECK(std::filesystem::exists(ws().manifest));
  INFO(ws().train_output);
  REQUIRE(ws().train_rc == 0);
  CHECK(std::filesystem::exists(ws().checkpoint));
  std::ifstream metrics(ws().dir / "run" / "metrics.jsonl");
  int lines = 0;
  for (std::string l; std::getline(metrics, l);) ++lines;
  CHECK(lines == 2);
}

TEST_CASE("train failures") {
  TempDir d("cli_fail");
  auto missing = run_cli("train --config " + ws().config.string() + " --manifest " + (d / "none.jsonl").string() +
                             " --out " + (d / "r").string(),
                         d.path());
  CHECK(missing.code == 1);

  REQUIRE(run_cli("make-fixtures --no-dense --out " + (d / "nd").string() + " --size 64 --pairs 1", d.path()).code == 0);
  auto no_dense = run_cli("train --config " + ws().config.string() + " --manifest " + (d / "nd" / "manifest.jsonl").string() +
                              " --out " + (d / "r").string(),
                          d.path());
  CHECK(no_dense.code == 1);
  CHECK(no_dense.output.find("lambda_detail") != std::string::npos);
  // The degenerate mode trains once the detail term is off.
  CHECK(run_cli("train --config " + ws().config.string() + " --lambda-detail 0 --manifest " +
                    (d / "nd" / "manifest.jsonl").string() + " --out " + (d / "r").string(),
                d.path())
            .code == 0);

  write_text(d / "bad.cfg", std::string(kTinyConfig) + "learning_rat = 0.1\n");
  CHECK(run_cli("train --config " + (d / "bad.cfg").string() + " --manifest " + ws().manifest.string() + " --out " +
                    (d / "r").string(),
                d.path())
            .code == 1);

  write_text(d / "blowup.cfg", std::string(kTinyConfig) + "learning_rate = 1e30\nmax_steps = 4\n");
  auto blowup = run_cli("train --config " + (d / "blowup.cfg").string() + " --manifest " + ws().manifest.string() +
                            " --out " + (d / "r2").string(),
                        d.path());
  CHECK(blowup.code == 2);
  CHECK(blowup.output.find("numerical") != std::string::npos);

  CHECK(run_cli("", d.path()).code == 1);
  CHECK(run_cli("frobnicate", d.path()).code == 1);
}

TEST_CASE("flags override the config file and the seed variable applies") {
  TempDir d("cli_flags");
  auto metrics = [&](const std::string& run) { return slurp(d / run / "metrics.jsonl"); };
  REQUIRE(run_cli("train --config " + ws().config.string() + " --max-steps 1 --manifest " + ws().manifest.string() +
                      " --out " + (d / "a").string(),
                  d.path())
              .code == 0);
  const std::string one = metrics("a");
  CHECK(std::count(one.begin(), one.end(), '\n') == 1);

  auto seeded = [&](const std::string& run, const std::string& seed) {
    return run_cli("train --config " + ws().config.string() + " --max-steps 1 --manifest " + ws().manifest.string() +
                       " --out " + (d / run).string(),
                   d.path(), "PSGANPP_SEED=" + seed)
        .code;
  };
  REQUIRE(seeded("s1", "11") == 0);
  REQUIRE(seeded("s2", "11") == 0);
  REQUIRE(seeded("s3", "12") == 0);
  CHECK(metrics("s1") == metrics("s2"));
  CHECK(metrics("s1") != metrics("s3"));
}

TEST_CASE("transfer modes") {
  REQUIRE(ws().train_rc == 0);
  TempDir d("cli_transfer");
  const infer::Bundle bundle = nn::load_checkpoint(ws().checkpoint);
  auto load = [](const std::string& prefix) {
    ManifestRecord r;
    r.id = prefix;
    r.image_path = prefix + ".png";
    r.parsing_path = prefix + "_parsing.png";
    r.landmarks_path = prefix + "_landmarks.json";
    return load_asset(r);
  };
  const FaceAsset x = load(ws().plain(1)), y1 = load(ws().makeup(1)), y2 = load(ws().makeup(2));

  REQUIRE(run_cli(transfer_args("--reference " + ws().makeup(1), d / "plain.png"), d.path()).code == 0);
  REQUIRE(run_cli(transfer_args("--reference " + ws().makeup(1) + " --alpha 1.0", d / "alpha1.png"), d.path()).code == 0);
  CHECK(slurp(d / "plain.png") == slurp(d / "alpha1.png"));
  CHECK(slurp(d / "plain.png") == encode_image_png(infer::transfer(x, y1, bundle)));

  REQUIRE(run_cli(transfer_args("--reference " + ws().makeup(1) + " --regions lip", d / "lip.png"), d.path()).code == 0);
  infer::TransferSpec lip;
  lip.references = {&y1};
  lip.regions = std::vector<Region>{Region::Lip};
  CHECK(slurp(d / "lip.png") == encode_image_png(infer::execute(bundle, x, lip)));

  REQUIRE(run_cli(transfer_args("--reference " + ws().makeup(1) + " " + ws().makeup(2) + " --alpha 0.3",
                                d / "two.png"),
                  d.path())
              .code == 0);
  CHECK(slurp(d / "two.png") == encode_image_png(infer::transfer_degree(x, y1, 0.3f, bundle, &y2)));
  CHECK(run_cli(transfer_args("--reference " + ws().makeup(1) + " " + ws().makeup(2), d / "bad.png"), d.path()).code ==
        1);

  REQUIRE(run_cli("transfer --remove --checkpoint " + ws().checkpoint.string() + " --source " + ws().makeup(1) +
                      " --out " + (d / "rm.png").string(),
                  d.path())
              .code == 0);
  REQUIRE(run_cli("remove --checkpoint " + ws().checkpoint.string() + " --source " + ws().makeup(1) + " --out " +
                      (d / "rm2.png").string(),
                  d.path())
              .code == 0);
  CHECK(slurp(d / "rm.png") == slurp(d / "rm2.png"));
  CHECK(slurp(d / "rm.png") == encode_image_png(infer::remove(y1, bundle)));
  CHECK(run_cli("transfer --remove --alpha 0.5 --checkpoint " + ws().checkpoint.string() + " --source " +
                    ws().makeup(1) + " --out " + (d / "x.png").string(),
                d.path())
            .code == 1);
  CHECK(run_cli(transfer_args("--alpha 2 --reference " + ws().makeup(1), d / "x.png"), d.path()).code == 1);
  CHECK(run_cli(transfer_args("", d / "x.png"), d.path()).code == 1);
  CHECK(run_cli(transfer_args("--reference " + (d / "nothing").string(), d / "x.png"), d.path()).code == 1);

  // Config-file equivalents of the flags.
  write_text(d / "t.cfg", "checkpoint = " + ws().checkpoint.string() + "\nsource = " + ws().plain(1) +
                              "\nreferences = " + ws().makeup(1) + "\nalpha = 1\nout = " + (d / "cfg.png").string() +
                              "\n");
  REQUIRE(run_cli("transfer --config " + (d / "t.cfg").string(), d.path()).code == 0);
  CHECK(slurp(d / "cfg.png") == slurp(d / "plain.png"));

  REQUIRE(run_cli(transfer_args("--reference " + ws().makeup(1) + " --dump-attention " + (d / "att").string(),
                                d / "att.png"),
                  d.path())
              .code == 0);
  CHECK(std::distance(std::filesystem::directory_iterator(d / "att"), std::filesystem::directory_iterator{}) == 2);
}

TEST_CASE("video mode") {
  REQUIRE(ws().train_rc == 0);
  TempDir d("cli_video");
  const std::string p = ws().plain(1);
  write_text(d / "frames.jsonl",
             nlohmann::json{{"id", "a"}, {"image_path", p + ".png"}, {"parsing_path", p + "_parsing.png"},
                            {"landmarks_path", p + "_landmarks.json"}}
                     .dump() +
                 "\n" + nlohmann::json{{"id", "b"}, {"image_path", p + ".png"}}.dump() + "\n");
  auto r = run_cli("transfer --checkpoint " + ws().checkpoint.string() + " --reference " + ws().makeup(1) +
                       " --video-dir " + d.path().string() + " --blend-bg --out " + (d / "out").string(),
                   d.path());
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(d / "out" / "a.png"));
  CHECK_FALSE(std::filesystem::exists(d / "out" / "b.png"));
  CHECK(r.output.find("frame 1") != std::string::npos);
}

TEST_CASE("eval") {
  REQUIRE(ws().train_rc == 0);
  TempDir d("cli_eval");
  for (const char* name : {"r1.jsonl", "r2.jsonl"})
    REQUIRE(run_cli("eval --checkpoint " + ws().checkpoint.string() + " --manifest " + ws().manifest.string() +
                        " --embedder mean-pool --out " + (d / name).string(),
                    d.path())
                .code == 0);
  const std::string report = slurp(d / "r1.jsonl");
  CHECK(report == slurp(d / "r2.jsonl"));
  std::istringstream in(report);
  int lines = 0;
  for (std::string l; std::getline(in, l); ++lines) CHECK(nlohmann::json::parse(l).contains("cos_sim"));
  CHECK(lines == 4);
  CHECK(run_cli("eval --checkpoint " + ws().checkpoint.string() + " --manifest " + ws().manifest.string() +
                    " --embedder arcface --out " + (d / "r3.jsonl").string(),
                d.path())
            .code == 1);
}
