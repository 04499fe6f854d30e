#include "psgan/face_assets.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <fstream>

using namespace psgan;
using psgan::testing::TempDir;

TEST_CASE("8-bit normalisation endpoints") {
  CHECK(from_u8(255) == 1.0f);
  CHECK(from_u8(0) == -1.0f);
  CHECK(from_u8(127.5) == 0.0f);
  for (int v = 0; v < 256; ++v) CHECK(int(to_u8(from_u8(v))) == v);
  CHECK(to_u8(1.7f) == 255);
  CHECK(to_u8(-3.0f) == 0);
}

TEST_CASE("landmark files need exactly 68 points") {
  std::string text = "[";
  for (int k = 0; k < 67; ++k) text += std::string(k ? "," : "") + "[1,2]";
  text += "]";
  try {
    parse_landmarks_json(text, "rec");
    FAIL("expected an AssetError");
  } catch (const AssetError& e) {
    CHECK(std::string(e.what()).find("landmark count") != std::string::npos);
    CHECK(e.record() == "rec");
  }
  CHECK_THROWS_AS(parse_landmarks_json("{\"a\":1}"), AssetError);
  CHECK_THROWS_AS(parse_landmarks_json("not json"), AssetError);
}

TEST_CASE("PNG round trip reproduces 8-bit pixels") {
  for (std::uint64_t seed : {1, 2, 3}) {
    ImageTensor img = psgan::testing::random_image(64, seed);
    ImageTensor back = decode_image_png(encode_image_png(img));
    REQUIRE(back.height == 64);
    CHECK(((back.data - img.data).abs() <= 1.0f / 255.0f).all());
  }
  CHECK_THROWS_AS(decode_image_png("definitely not a png"), AssetError);
}

TEST_CASE("save then load reproduces a fixture asset") {
  TempDir dir("assets");
  FixturePair p = synth_fixture(3, 64);
  ManifestRecord rec = save_asset(p.makeup, dir.path());
  CHECK(rec.image_path == dir / "makeup_3.png");
  FaceAsset back = load_asset(rec);
  CHECK(((back.image.data - p.makeup.image.data).abs() <= 1.0f / 255.0f).all());
  CHECK(back.parsing == p.makeup.parsing);
  CHECK((back.landmarks - p.makeup.landmarks).cwiseAbs().maxCoeff() < 1e-4f);
  REQUIRE(back.dense.has_value());
  CHECK(back.dense->rows() == kFixtureDensePoints);
  CHECK(back.domain == Domain::Makeup);
}

TEST_CASE("manifest round trip resolves relative paths") {
  TempDir dir("manifest");
  Manifest m;
  for (std::uint64_t s : {1, 2}) {
    FixturePair p = synth_fixture(s, 64);
    p.plain.dense.reset();
    m.records.push_back(save_asset(p.plain, dir.path()));
    m.records.push_back(save_asset(p.makeup, dir.path()));
  }
  write_manifest(m, dir / "manifest.jsonl");
  Manifest back = read_manifest(dir / "manifest.jsonl");
  REQUIRE(back.records.size() == 4);
  CHECK(back.records[0].image_path == m.records[0].image_path);
  CHECK_FALSE(back.records[0].dense_path.has_value());
  CHECK(back.records[1].dense_path.has_value());
  CHECK_FALSE(back.has_dense());
  CHECK(back.domain(Domain::Makeup).size() == 2);
  CHECK(load_assets(back).size() == 4);
}

TEST_CASE("manifest errors name the problem") {
  TempDir dir("badmanifest");
  {
    std::ofstream(dir / "m.jsonl") << "{\"id\":\"a\"}\n";
  }
  CHECK_THROWS_WITH_AS(read_manifest(dir / "m.jsonl"), doctest::Contains("manifest line 1"), AssetError);
  {
    std::ofstream out(dir / "dup.jsonl");
    for (int i = 0; i < 2; ++i)
      out << R"({"id":"a","image_path":"a.png","parsing_path":"p.png","landmarks_path":"l.json","domain":"makeup"})"
          << "\n";
  }
  CHECK_THROWS_WITH_AS(read_manifest(dir / "dup.jsonl"), doctest::Contains("duplicate"), AssetError);
  ManifestRecord missing{"ghost", dir / "ghost.png", dir / "ghost_p.png", dir / "ghost.json", {}, Domain::Makeup};
  CHECK_THROWS_WITH_AS(load_asset(missing), doctest::Contains("ghost"), AssetError);
}

TEST_CASE("asset validation") {
  FaceAsset a = synth_fixture(1, 64).plain;
  CHECK_NOTHROW(validate_asset(a));

  FaceAsset bad_range = a;
  bad_range.image.data(5) = 1.5f;
  CHECK_THROWS_AS(validate_asset(bad_range), AssetError);

  FaceAsset bad_label = a;
  bad_label.parsing(3, 3) = 7;
  CHECK_THROWS_AS(validate_asset(bad_label), AssetError);

  FaceAsset bad_shape = a;
  bad_shape.parsing = ParsingMap::Zero(32, 32);
  CHECK_THROWS_AS(validate_asset(bad_shape), AssetError);

  FaceAsset bad_lm = a;
  bad_lm.landmarks(10, 0) = 80.0f;
  CHECK_THROWS_AS(validate_asset(bad_lm), AssetError);

  ImageTensor odd(48, 48);
  CHECK_THROWS_AS(validate_image(odd), AssetError);
}

TEST_CASE("downscale_parsing") {
  ParsingMap constant = ParsingMap::Constant(256, 256, 2);
  ParsingMap small = downscale_parsing(constant, 4);
  CHECK(small.rows() == 64);
  CHECK(small.cols() == 64);
  CHECK((small.array() == 2).all());

  std::mt19937_64 rng(4);
  ParsingMap random(64, 64);
  for (Eigen::Index i = 0; i < random.size(); ++i) random.data()[i] = std::uint8_t(rng() % 4);
  ParsingMap d = downscale_parsing(random, 4);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(d(y, x) == random(4 * y, 4 * x));
  CHECK(downscale_parsing(downscale_parsing(random, 2), 4) == downscale_parsing(random, 8));
  CHECK_THROWS_AS(downscale_parsing(random, 3), std::invalid_argument);
}

TEST_CASE("scale_landmarks") {
  Landmarks lm = Landmarks::Zero();
  lm(0, 0) = 128;
  lm(0, 1) = 64;
  Landmarks s = scale_landmarks(lm, 4);
  CHECK(s(0, 0) == 32.0f);
  CHECK(s(0, 1) == 16.0f);
  CHECK(scale_landmarks(lm, 1) == lm);

  Landmarks fx = synth_fixture(5, 256).plain.landmarks;
  CHECK((scale_landmarks(fx, 4) * 4.0f) == fx);
}

TEST_CASE("synthetic fixtures") {
  FixturePair a = synth_fixture(7, 64), b = synth_fixture(7, 64);
  CHECK((a.plain.image.data == b.plain.image.data).all());
  CHECK((a.makeup.image.data == b.makeup.image.data).all());
  CHECK(a.plain.parsing == b.plain.parsing);
  CHECK(a.makeup.landmarks == b.makeup.landmarks);
  CHECK_FALSE((synth_fixture(8, 64).plain.image.data == a.plain.image.data).all());

  for (const FaceAsset* f : {&a.plain, &a.makeup}) {
    CHECK_NOTHROW(validate_asset(*f));
    const FaceGeometry& g = f == &a.plain ? a.plain_geometry : a.makeup_geometry;
    int lip = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double dx = (x - g.cx) / g.lip_rx, dy = (y - g.lip_y) / g.lip_ry;
        if (dx * dx + dy * dy <= 1.0) {
          CHECK(f->parsing(y, x) == 1);
          ++lip;
        }
      }
    CHECK(lip > 50);
    const double ex = (f->landmarks(0, 0) - g.cx) / g.rx, ey = (f->landmarks(0, 1) - g.cy) / g.ry;
    const double rho = std::sqrt(ex * ex + ey * ey);
    CHECK(std::abs(rho - 1.0) * std::min(g.rx, g.ry) < 0.5);
  }
  CHECK(a.plain.domain == Domain::NonMakeup);
  CHECK(a.makeup.domain == Domain::Makeup);
}

TEST_CASE("region and domain names") {
  CHECK(parse_region("lip") == Region::Lip);
  CHECK(std::string(region_name(Region::Eye)) == "eye");
  CHECK_THROWS_AS(parse_region("nose"), std::invalid_argument);
  CHECK(parse_domain("non-makeup") == Domain::NonMakeup);
  CHECK_THROWS_AS(parse_domain("other"), std::invalid_argument);
}
