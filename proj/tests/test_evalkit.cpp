#include "psgan/evalkit.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <sstream>

using namespace psgan;
using namespace psgan::eval;

namespace {

struct Patch {
  ImageTensor image;
  ParsingMap parsing;
};

// Region pixels (label `label`) take the given colours in order; the rest is
// background.
Patch patch(const std::vector<std::array<int, 3>>& colours, std::uint8_t label = 1) {
  const int side = int(std::ceil(std::sqrt(double(colours.size()) + 1)));
  Patch p{ImageTensor(side, side), ParsingMap::Zero(side, side)};
  const Eigen::Index plane = p.image.plane();
  for (std::size_t i = 0; i < colours.size(); ++i) {
    p.parsing.data()[i] = label;
    for (int c = 0; c < 3; ++c) p.image.data(c * plane + Eigen::Index(i)) = from_u8(colours[i][c]);
  }
  return p;
}

std::vector<double> hue_hist(const std::vector<std::array<int, 3>>& colours) {
  std::vector<double> h(360, 0.0);
  for (const auto& c : colours) h[std::min(359, int(hue_of(c[0], c[1], c[2]) * 360))] += 1;
  return h;
}

}  // namespace

TEST_CASE("landmark cosine similarity") {
  Landmarks a = synth_fixture(1, 64).plain.landmarks;
  CHECK(landmark_cos_sim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(landmark_cos_sim(a, a * 3.0f) == doctest::Approx(1.0).epsilon(1e-6));
  Landmarks b = synth_fixture(2, 64).makeup.landmarks;
  CHECK(landmark_cos_sim(a, b) == doctest::Approx(landmark_cos_sim(b, a)).epsilon(1e-12));
  CHECK(landmark_cos_sim(a * 2.0f, b) == doctest::Approx(landmark_cos_sim(a, b)).epsilon(1e-6));

  // Orthogonal: one set lives only on x, the other only on y.
  Landmarks ox = Landmarks::Zero(), oy = Landmarks::Zero();
  ox.col(0).setOnes();
  oy.col(1).setOnes();
  CHECK(landmark_cos_sim(ox, oy) == 0.0);
  CHECK(landmark_cos_sim(ox, -ox) == 0.0);
  CHECK_THROWS_AS(landmark_cos_sim(Landmarks::Zero(), a), EvalError);

  // Hand-computed: all points (1, 0) vs all points (1, 1) -> 1 / sqrt(2).
  Landmarks diag = Landmarks::Ones();
  CHECK(landmark_cos_sim(ox, diag) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("identity similarity") {
  MeanPoolEmbedder e;
  ImageTensor a = psgan::testing::random_image(8, 1);
  CHECK(identity_similarity(a, a, &e) == doctest::Approx(1.0).epsilon(1e-12));

  ImageTensor u(2, 2), v(2, 2);
  // u channel means (0.5, 0, 0.25); v channel means (0.5, 0.5, 0).
  u.data << 1, 0, 1, 0, 0, 0, 0, 0, 0.5, 0, 0.5, 0;
  v.data << 0.5, 0.5, 0.5, 0.5, 1, 0, 0, 1, 0, 0, 0, 0;
  const double expect = 0.25 / (std::sqrt(0.3125) * std::sqrt(0.5));
  CHECK(identity_similarity(u, v, &e) == doctest::Approx(expect).epsilon(1e-7));

  CHECK_THROWS_AS(identity_similarity(a, a, nullptr), EvalError);
  CHECK(make_embedder("none") == nullptr);
  CHECK(make_embedder("mean-pool")->name() == "mean-pool");
  CHECK_THROWS_AS(make_embedder("arcface"), EvalError);
  ImageTensor zero(2, 2);
  zero.data.setZero();
  CHECK_THROWS_AS(identity_similarity(zero, u, &e), EvalError);
}

TEST_CASE("region histogram distance") {
  FaceAsset f = synth_fixture(3, 64).makeup;
  CHECK(region_hist_distance(f.image, f.parsing, f.image, f.parsing, Region::Lip) == 0.0);

  ImageTensor shifted = f.image;
  const Eigen::Index plane = f.image.plane();
  for (Eigen::Index i = 0; i < plane; ++i)
    if (f.parsing.data()[i] == std::uint8_t(Region::Skin))
      for (int c = 0; c < 3; ++c) {
        const int v = to_u8(f.image.data(c * plane + i));
        REQUIRE(v <= 245);
        shifted.data(c * plane + i) = from_u8(v + 10);
      }
  CHECK(region_hist_distance(shifted, f.parsing, f.image, f.parsing, Region::Skin) ==
        doctest::Approx(10.0 / 255.0).epsilon(1e-9));

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::array<int, 3>> ca(1 + rng() % 60), cb(1 + rng() % 60);
    for (auto& c : ca) c = {int(rng() % 256), int(rng() % 256), int(rng() % 64)};
    for (auto& c : cb) c = {int(rng() % 128), int(rng() % 256), int(rng() % 256)};
    Patch a = patch(ca), b = patch(cb);
    double oracle_total = 0;
    for (int ch = 0; ch < 3; ++ch) {
      std::vector<std::uint8_t> va, vb;
      for (auto& c : ca) va.push_back(std::uint8_t(c[ch]));
      for (auto& c : cb) vb.push_back(std::uint8_t(c[ch]));
      oracle_total += oracle::w1_u8(va, vb);
    }
    const double d = region_hist_distance(a.image, a.parsing, b.image, b.parsing, Region::Lip);
    CHECK(d == doctest::Approx(oracle_total / 3).epsilon(1e-9));
    CHECK(d == doctest::Approx(region_hist_distance(b.image, b.parsing, a.image, a.parsing, Region::Lip)));
  }

  // Triangle inequality on fixtures.
  FaceAsset g = synth_fixture(4, 64).makeup, h = synth_fixture(5, 64).plain;
  for (Region r : kFaceRegions) {
    const double fg = region_hist_distance(f.image, f.parsing, g.image, g.parsing, r);
    const double gh = region_hist_distance(g.image, g.parsing, h.image, h.parsing, r);
    const double fh = region_hist_distance(f.image, f.parsing, h.image, h.parsing, r);
    CHECK(fh <= fg + gh + 1e-12);
  }

  ParsingMap empty = ParsingMap::Zero(64, 64);
  CHECK_THROWS_AS(region_hist_distance(f.image, empty, f.image, f.parsing, Region::Lip), EvalError);
}

TEST_CASE("hue") {
  CHECK(hue_of(255, 0, 0) == 0.0);
  CHECK(hue_of(255, 255, 0) == doctest::Approx(1.0 / 6));
  CHECK(hue_of(0, 255, 0) == doctest::Approx(2.0 / 6));
  CHECK(hue_of(0, 255, 255) == doctest::Approx(3.0 / 6));
  CHECK(hue_of(0, 0, 255) == doctest::Approx(4.0 / 6));
  CHECK(hue_of(255, 0, 255) == doctest::Approx(5.0 / 6));
  CHECK(hue_of(255, 0, 51) == doctest::Approx(1.0 - 0.2 / 6));
  CHECK(hue_of(90, 90, 90) == 0.0);
  // Hue ignores brightness and saturation scaling.
  CHECK(hue_of(200, 100, 50) == doctest::Approx(hue_of(100, 50, 25)));
  CHECK(hue_of(200, 100, 50) == doctest::Approx(hue_of(220, 160, 130)));
}

TEST_CASE("region hue distance") {
  // Pure hues 10 degrees apart either side of red: the short way round is 20 degrees.
  auto at = [](double degrees) {
    // Red-dominant colour with the requested hue, for hues within 60 degrees of red.
    const double h = degrees < 0 ? -degrees : degrees;
    const int other = int(std::lround(255 * h / 60.0));
    return degrees < 0 ? std::array<int, 3>{255, 0, other} : std::array<int, 3>{255, other, 0};
  };
  Patch a = patch({at(12), at(12), at(12)}), b = patch({at(-12), at(-12)});
  const double d = region_hue_distance(a.image, a.parsing, b.image, b.parsing, Region::Lip);
  const double ha = hue_of(at(12)[0], at(12)[1], at(12)[2]) * 360, hb = hue_of(at(-12)[0], at(-12)[1], at(-12)[2]) * 360;
  CHECK(d == doctest::Approx((std::floor(ha) + 360 - std::floor(hb)) / 360.0).epsilon(1e-9));
  CHECK(d < 0.1);
  CHECK(region_hue_distance(a.image, a.parsing, a.image, a.parsing, Region::Lip) == 0.0);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<std::array<int, 3>> ca(1 + rng() % 80), cb(1 + rng() % 80);
    for (auto& c : ca) c = {int(rng() % 256), int(rng() % 256), int(rng() % 256)};
    const int bias = int(rng() % 3);
    for (auto& c : cb) {
      c = {int(rng() % 256), int(rng() % 256), int(rng() % 256)};
      c[bias] = 255;
    }
    Patch pa = patch(ca), pb = patch(cb);
    const double got = region_hue_distance(pa.image, pa.parsing, pb.image, pb.parsing, Region::Lip);
    CHECK(got == doctest::Approx(oracle::circular_w1(hue_hist(ca), hue_hist(cb))).epsilon(1e-9));
    CHECK(got == doctest::Approx(region_hue_distance(pb.image, pb.parsing, pa.image, pa.parsing, Region::Lip)));
    CHECK(got <= 0.5);
  }

  Patch none = patch({});
  CHECK_THROWS_AS(region_hue_distance(none.image, none.parsing, a.image, a.parsing, Region::Lip), EvalError);
}

TEST_CASE("pair report") {
  nn::ArchSpec arch;
  arch.input_size = 64;
  arch.base_width = 4;
  arch.disc_width = 4;
  const auto bundle = infer::Bundle::create(arch, 1);
  std::vector<FaceAsset> assets;
  for (std::uint64_t s = 1; s <= 2; ++s) {
    auto p = synth_fixture(s, 64);
    assets.push_back(p.plain);
    assets.push_back(p.makeup);
  }
  MeanPoolEmbedder e;
  auto rows = evaluate(assets, bundle, &e);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].pair_id == assets[0].id + "__" + assets[1].id);
  // Without a detector the source landmarks stand in.
  CHECK(rows[0].cos_sim == doctest::Approx(1.0));

  std::ostringstream out;
  write_report(rows, out);
  std::istringstream in(out.str());
  int lines = 0;
  for (std::string l; std::getline(in, l); ++lines) {
    auto j = nlohmann::json::parse(l);
    CHECK(j.contains("pair_id"));
    CHECK(j.contains("cos_sim"));
    CHECK(j.contains("identity_sim"));
    CHECK(j.at("region_distances").contains("lip"));
    CHECK(j.at("region_distances").contains("skin"));
    CHECK(j.at("region_distances").contains("eye"));
  }
  CHECK(lines == 4);

  PairReport bare;
  CHECK_FALSE(bare.to_json().contains("identity_sim"));
}
