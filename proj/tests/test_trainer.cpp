#include "psgan/trainer.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace psgan;
using namespace psgan::train;
using psgan::testing::TempDir;

namespace {

std::vector<FaceAsset> fixture_assets() {
  std::vector<FaceAsset> a;
  for (std::uint64_t s = 1; s <= 2; ++s) {
    auto p = synth_fixture(s, 64);
    a.push_back(std::move(p.plain));
    a.push_back(std::move(p.makeup));
  }
  return a;
}

TrainConfig tiny_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.image_size = 64;
  c.base_width = 4;
  c.disc_width = 4;
  c.seed = seed;
  return c;
}

std::size_t hash_params(const std::vector<ag::Tensor<float>>& params) {
  std::size_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value().data());
    for (Eigen::Index i = 0; i < p.value().size() * Eigen::Index(sizeof(float)); ++i) h = (h ^ bytes[i]) * 1099511628211ull;
  }
  return h;
}

bool same_terms(const losses::LossTerms& a, const losses::LossTerms& b) {
  return a.d_adv == b.d_adv && a.g_adv == b.g_adv && a.g_cyc == b.g_cyc && a.g_per == b.g_per &&
         a.g_region == b.g_region && a.g_detail == b.g_detail;
}

}  // namespace

TEST_CASE("defaults") {
  TrainConfig c;
  CHECK(c.learning_rate == 2e-4);
  CHECK(c.batch_size == 1);
  CHECK(c.beta1 == 0.5);
  CHECK(c.beta2 == 0.999);
  CHECK(c.epochs == 50);
  CHECK(c.weights.cyc == 10);
  CHECK(c.weights.per == 0.005);
  CHECK(c.weights.detail == 3);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config files") {
  std::istringstream in(
      "# comment\n"
      "learning_rate = 0.001\n"
      "betas = 0.4, 0.99\n"
      "image_size = 64\n"
      "lambda_detail = 0\n"
      "max_steps = 7\n");
  TrainConfig c = apply_config(KeyValueConfig::parse(in));
  CHECK(c.learning_rate == 0.001);
  CHECK(c.beta1 == 0.4);
  CHECK(c.beta2 == 0.99);
  CHECK(c.image_size == 64);
  CHECK(c.weights.detail == 0);
  CHECK(c.max_steps == 7);
  CHECK(c.weights.cyc == 10);

  std::istringstream unknown("learning_rat = 1\n");
  CHECK_THROWS_AS(apply_config(KeyValueConfig::parse(unknown)), ConfigFileError);

  TrainConfig bad;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigFileError);
  CHECK_NOTHROW(bad.validate(true));
  bad = TrainConfig{};
  bad.image_size = 128;
  CHECK_THROWS_AS(bad.validate(), ConfigFileError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigFileError);

  for (const auto& key : train_config_keys()) CHECK(TrainConfig{}.to_json().contains(key));
}

TEST_CASE("sample_pair") {
  std::vector<FaceAsset> assets(7);
  for (int i = 0; i < 7; ++i) {
    assets[i].id = "a" + std::to_string(i);
    assets[i].domain = i < 3 ? Domain::NonMakeup : Domain::Makeup;
  }
  Corpus corpus = Corpus::from_assets(assets);

  std::mt19937_64 r1(5), r2(5);
  for (int i = 0; i < 50; ++i) {
    Triple a = sample_pair(corpus, r1), b = sample_pair(corpus, r2);
    CHECK(a.x == b.x);
    CHECK(a.y1 == b.y1);
    CHECK(a.y_r == b.y_r);
  }

  const int draws = 10000;
  std::map<std::string, int> fx, fy1, fyr;
  std::mt19937_64 rng(11);
  for (int i = 0; i < draws; ++i) {
    Triple t = sample_pair(corpus, rng);
    REQUIRE(t.x->domain == Domain::NonMakeup);
    REQUIRE(t.y1->domain == Domain::Makeup);
    REQUIRE(t.y_r->domain == Domain::Makeup);
    ++fx[t.x->id];
    ++fy1[t.y1->id];
    ++fyr[t.y_r->id];
  }
  // Chi-square against uniform at the 0.1% level (df 2 and 3).
  auto chi2 = [&](const std::map<std::string, int>& f, int k) {
    const double e = double(draws) / k;
    double s = 0;
    for (const auto& [id, n] : f) s += (n - e) * (n - e) / e;
    return s;
  };
  CHECK(fx.size() == 3);
  CHECK(fy1.size() == 4);
  CHECK(chi2(fx, 3) < 13.82);
  CHECK(chi2(fy1, 4) < 16.27);
  CHECK(chi2(fyr, 4) < 16.27);

  Corpus only_makeup = Corpus::from_assets({assets[4]});
  CHECK_THROWS_AS(sample_pair(only_makeup, rng), std::invalid_argument);
}

TEST_CASE("first step at initialization") {
  Trainer t(Corpus::from_assets(fixture_assets()), tiny_config());
  auto r = t.step();
  for (double v : {r.terms.d_adv, r.terms.g_adv, r.terms.g_cyc, r.terms.g_per, r.terms.g_region, r.terms.g_detail})
    CHECK(std::isfinite(v));
  CHECK(r.loss_d > 0);
  CHECK(r.loss_g > 0);
  CHECK(r.terms.g_detail > 0);
  CHECK(t.steps_done() == 1);
}

TEST_CASE("zero learning rate freezes parameters") {
  TrainConfig c = tiny_config();
  c.learning_rate = 0;
  Trainer t(Corpus::from_assets(fixture_assets()), c);
  const auto before = t.bundle().named_parameters();
  std::vector<Eigen::ArrayXf> copy;
  for (const auto& [name, p] : before) copy.push_back(p.value());
  t.step();
  t.step();
  const auto after = t.bundle().named_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK((after[i].second.value() == copy[i]).all());
}

TEST_CASE("each sub-step touches only its own networks") {
  Trainer t(Corpus::from_assets(fixture_assets()), tiny_config());
  std::size_t g = hash_params(t.bundle().generator_parameters());
  std::size_t d = hash_params(t.bundle().discriminator_parameters());
  int phases = 0;
  t.on_phase = [&](Phase p) {
    const std::size_t g2 = hash_params(t.bundle().generator_parameters());
    const std::size_t d2 = hash_params(t.bundle().discriminator_parameters());
    if (p == Phase::Discriminator) {
      CHECK(g2 == g);
      CHECK(d2 != d);
    } else {
      CHECK(d2 == d);
      CHECK(g2 != g);
    }
    g = g2;
    d = d2;
    ++phases;
  };
  for (int i = 0; i < 3; ++i) t.step();
  CHECK(phases == 6);
}

TEST_CASE("seeded runs are reproducible") {
  Trainer a(Corpus::from_assets(fixture_assets()), tiny_config(9));
  Trainer b(Corpus::from_assets(fixture_assets()), tiny_config(9));
  for (int i = 0; i < 10; ++i) CHECK(same_terms(a.step().terms, b.step().terms));

  Trainer c(Corpus::from_assets(fixture_assets()), tiny_config(10));
  Trainer d(Corpus::from_assets(fixture_assets()), tiny_config(9));
  CHECK_FALSE(same_terms(c.step().terms, d.step().terms));
}

TEST_CASE("resume matches an uninterrupted run") {
  TempDir dir("resume");
  Trainer full(Corpus::from_assets(fixture_assets()), tiny_config(4));
  std::vector<losses::LossReport> expect;
  for (int i = 0; i < 5; ++i) full.step();
  full.save(dir / "mid.ckpt");
  for (int i = 0; i < 5; ++i) expect.push_back(full.step());

  Trainer resumed(Corpus::from_assets(fixture_assets()), tiny_config(4));
  resumed.resume(dir / "mid.ckpt");
  CHECK(resumed.steps_done() == 5);
  for (int i = 0; i < 5; ++i) {
    auto r = resumed.step();
    CHECK(std::abs(r.loss_g - expect[i].loss_g) <= 1e-5);
    CHECK(std::abs(r.loss_d - expect[i].loss_d) <= 1e-5);
    CHECK(std::abs(r.terms.g_cyc - expect[i].terms.g_cyc) <= 1e-5);
  }

  TrainConfig other = tiny_config(4);
  other.base_width = 8;
  Trainer wrong(Corpus::from_assets(fixture_assets()), other);
  CHECK_THROWS(wrong.resume(dir / "mid.ckpt"));
}

TEST_CASE("train_loop writes metrics and checkpoints") {
  TempDir dir("loop");
  TrainConfig c = tiny_config(2);
  c.max_steps = 6;
  c.checkpoint_interval = 4;
  Trainer t(Corpus::from_assets(fixture_assets()), c);
  auto res = train_loop(t, dir.path());
  CHECK(res.steps == 6);
  CHECK(std::filesystem::exists(dir / "step_4.ckpt"));
  CHECK(std::filesystem::exists(dir / "final.ckpt"));

  auto lines = [&] {
    std::ifstream in(res.metrics);
    std::vector<nlohmann::json> out;
    for (std::string l; std::getline(in, l);) out.push_back(nlohmann::json::parse(l));
    return out;
  };
  auto first = lines();
  REQUIRE(first.size() == 6);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].at("step") == long(i + 1));
    for (const char* k : {"d_adv", "g_adv", "g_cyc", "g_per", "g_region", "g_detail", "loss_d", "loss_g"})
      CHECK(first[i].contains(k));
  }

  // Resume from step 4 with a longer budget: the file is rewritten to the
  // executed steps and the overlapping lines agree.
  TrainConfig longer = c;
  longer.max_steps = 8;
  Trainer t2(Corpus::from_assets(fixture_assets()), longer);
  auto res2 = train_loop(t2, dir.path(), dir / "step_4.ckpt");
  CHECK(res2.steps == 8);
  auto second = lines();
  REQUIRE(second.size() == 8);
  for (int i = 0; i < 6; ++i)
    CHECK(std::abs(second[i].at("loss_g").get<double>() - first[i].at("loss_g").get<double>()) <= 1e-5);
}

TEST_CASE("startup validation") {
  auto assets = fixture_assets();
  for (auto& a : assets) a.dense.reset();
  CHECK_THROWS_WITH_AS(Trainer(Corpus::from_assets(assets), tiny_config()), doctest::Contains("lambda_detail"),
                       std::invalid_argument);

  TrainConfig degenerate = tiny_config();
  degenerate.weights.detail = 0;
  Trainer t(Corpus::from_assets(assets), degenerate);
  auto r = t.step();
  CHECK(std::isfinite(r.loss_g));
  CHECK(r.terms.g_detail == 0.0);

  TrainConfig big = tiny_config();
  big.image_size = 256;
  CHECK_THROWS_AS(Trainer(Corpus::from_assets(fixture_assets()), big), nn::ShapeError);

  std::vector<FaceAsset> plain_only;
  for (auto& a : fixture_assets())
    if (a.domain == Domain::NonMakeup) plain_only.push_back(a);
  CHECK_THROWS_AS(Trainer(Corpus::from_assets(plain_only), tiny_config()), std::invalid_argument);
}

TEST_CASE("batches above one") {
  TrainConfig c = tiny_config();
  c.batch_size = 2;
  Trainer t(Corpus::from_assets(fixture_assets()), c);
  auto r = t.step();
  CHECK(std::isfinite(r.loss_g));
  CHECK(t.steps_per_epoch() == 1);
}
