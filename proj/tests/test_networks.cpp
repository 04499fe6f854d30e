#include "psgan/networks.hpp"
#include "grad_check.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <set>

using namespace psgan;
using namespace psgan::nn;
using psgan::testing::TempDir;

namespace {

ArchSpec tiny(int size = 64, int width = 4) {
  ArchSpec a;
  a.input_size = size;
  a.base_width = width;
  a.disc_width = width;
  return a;
}

Tensor<float> image_tensor(int size, std::uint64_t seed) {
  return to_tensor<float>(psgan::testing::random_image(size, seed));
}

bool same_values(const Tensor<float>& a, const Tensor<float>& b) {
  return a.value().size() == b.value().size() && (a.value() == b.value()).all();
}

}  // namespace

TEST_CASE("shape contract at 64 and 256") {
  ag::NoGradGuard ng;
  for (int size : {64, 256}) {
    CAPTURE(size);
    auto b = NetworkBundle<float>::create(tiny(size), 1);
    auto img = image_tensor(size, 2);
    const int bottleneck = size / 4;
    auto md = mdnet_forward(b, img);
    CHECK((md.gamma.shape() == Shape{1, 1, bottleneck, bottleneck}));
    CHECK((md.beta.shape() == Shape{1, 1, bottleneck, bottleneck}));
    CHECK((md.features.shape() == Shape{1, 16, bottleneck, bottleneck}));
    auto id = idnet_forward(b, img);
    CHECK((id.gamma.shape() == Shape{1, 1, bottleneck, bottleneck}));
    auto v = stnet_encode(b, img);
    CHECK((v.shape() == Shape{1, 16, bottleneck, bottleneck}));
    auto out = stnet_decode(b, v);
    CHECK((out.shape() == img.shape()));
    CHECK((out.value().abs() <= 1.0f).all());
  }
}

TEST_CASE("512 variant has one more halving") {
  ArchSpec a = tiny(512, 1);
  CHECK(a.downsamples() == 3);
  CHECK(a.bottleneck_size() == 64);
  CHECK(ArchSpec{}.channels_at_split() == 256);
  CHECK(ArchSpec{}.bottleneck_size() == 64);
}

TEST_CASE("discriminator logit grid") {
  ag::NoGradGuard ng;
  auto b = NetworkBundle<float>::create(tiny(256, 2), 3);
  auto logits = discriminator_forward(b, image_tensor(256, 4), Which::X);
  CHECK((logits.shape() == Shape{1, 1, 30, 30}));
  CHECK(logits.value().allFinite());
  auto b64 = NetworkBundle<float>::create(tiny(64, 2), 3);
  CHECK((discriminator_forward(b64, image_tensor(64, 4), Which::Y).shape() == Shape{1, 1, 6, 6}));
}

TEST_CASE("size mismatches raise ShapeError") {
  auto b = NetworkBundle<float>::create(tiny(64), 1);
  auto wrong = image_tensor(256, 1);
  CHECK_THROWS_AS(mdnet_forward(b, wrong), ShapeError);
  CHECK_THROWS_AS(idnet_forward(b, wrong), ShapeError);
  CHECK_THROWS_AS(stnet_encode(b, wrong), ShapeError);
  CHECK_THROWS_AS(discriminator_forward(b, wrong, Which::X), ShapeError);
  CHECK_THROWS_AS(stnet_decode(b, Tensor<float>::zeros(Shape{1, 16, 8, 8})), ShapeError);
  ArchSpec bad = tiny();
  bad.input_size = 100;
  CHECK_THROWS_AS(NetworkBundle<float>::create(bad, 1), ShapeError);
}

TEST_CASE("encoder instance norm layers are normalised") {
  ag::NoGradGuard ng;
  auto b = NetworkBundle<float>::create(tiny(64, 4), 5);
  auto img = image_tensor(64, 6);
  auto h = ag::instance_norm(b.st_encoder.stem(img));
  const auto plane = h.shape().plane();
  for (int c = 0; c < h.shape().c; ++c) {
    auto seg = h.value().segment(c * plane, plane);
    CHECK(std::abs(seg.mean()) < 1e-4f);
    CHECK(std::abs(seg.square().mean() - 1.0f) < 1e-3f);
  }
}

TEST_CASE("forward passes are deterministic and input dependent") {
  ag::NoGradGuard ng;
  auto b = NetworkBundle<float>::create(tiny(), 7);
  auto x = image_tensor(64, 8), y = image_tensor(64, 9);
  CHECK(same_values(stnet_encode(b, x), stnet_encode(b, x)));
  CHECK(same_values(mdnet_forward(b, x).gamma, mdnet_forward(b, x).gamma));
  CHECK((stnet_encode(b, x).value() - stnet_encode(b, y).value()).abs().maxCoeff() > 0.0f);
}

TEST_CASE("sub-networks do not share parameters") {
  ag::NoGradGuard ng;
  auto b = NetworkBundle<float>::create(tiny(), 10);
  auto x = image_tensor(64, 11);
  auto id_before = idnet_forward(b, x).gamma;
  auto dy_before = discriminator_forward(b, x, Which::Y);
  auto dx_before = discriminator_forward(b, x, Which::X);
  for (auto& [name, t] : b.named_parameters())
    if (name.starts_with("mdnet") || name.starts_with("d_x")) t.mutable_value() += 0.05f;
  CHECK(same_values(idnet_forward(b, x).gamma, id_before));
  CHECK(same_values(discriminator_forward(b, x, Which::Y), dy_before));
  CHECK_FALSE(same_values(discriminator_forward(b, x, Which::X), dx_before));

  std::set<const void*> nodes;
  auto params = b.named_parameters();
  for (auto& [name, t] : params) nodes.insert(t.node());
  CHECK(nodes.size() == params.size());
  CHECK(b.generator_parameters().size() + b.discriminator_parameters().size() == params.size());
}

TEST_CASE("decoder gradient reaches the bottleneck features") {
  auto b = NetworkBundle<double>::create(tiny(64, 2), 12);
  std::mt19937_64 rng(13);
  auto v = psgan::testing::random_param(Shape{1, 8, 16, 16}, rng);
  auto proj = psgan::testing::random_param(Shape{1, 3, 64, 64}, rng).detach();
  auto loss = [&] { return ag::mean(ag::mul(stnet_decode(b, v), proj)); };
  auto r = psgan::testing::grad_check(loss, {v}, 10);
  CHECK(r.rel < 1e-3);
  CHECK(std::abs(r.analytic) + std::abs(r.numeric) > 0.0);
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir("ckpt");
  auto b = NetworkBundle<float>::create(tiny(), 14);
  save_checkpoint(b, dir / "a.ckpt");
  ArchSpec expect = tiny();
  auto back = load_checkpoint(dir / "a.ckpt", &expect);
  CHECK(back.arch == b.arch);
  auto p1 = b.named_parameters(), p2 = back.named_parameters();
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].first == p2[i].first);
    CHECK((p1[i].second.shape() == p2[i].second.shape()));
    CHECK(std::memcmp(p1[i].second.value().data(), p2[i].second.value().data(),
                      sizeof(float) * p1[i].second.value().size()) == 0);
  }
  CHECK(file_digest(dir / "a.ckpt").size() == 64);

  CheckpointExtras ex;
  ex.train_state = {{"step", 3}};
  ex.tensors.emplace_back("m", Eigen::ArrayXf::LinSpaced(5, 0, 1));
  save_checkpoint(b, dir / "b.ckpt", &ex);
  CheckpointExtras ex2;
  load_checkpoint(dir / "b.ckpt", nullptr, &ex2);
  CHECK(ex2.train_state.at("step") == 3);
  REQUIRE(ex2.tensors.size() == 1);
  CHECK((ex2.tensors[0].second == ex.tensors[0].second).all());
}

TEST_CASE("checkpoint metadata and corruption errors") {
  TempDir dir("ckpt_bad");
  auto big = NetworkBundle<float>::create(tiny(512, 1), 15);
  save_checkpoint(big, dir / "big.ckpt");
  ArchSpec small = tiny(256, 1);
  CHECK_THROWS_AS(load_checkpoint(dir / "big.ckpt", &small), ShapeError);

  {
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), std::runtime_error);

  auto b = NetworkBundle<float>::create(tiny(), 16);
  save_checkpoint(b, dir / "t.ckpt");
  const auto full = std::filesystem::file_size(dir / "t.ckpt");
  std::filesystem::resize_file(dir / "t.ckpt", full - 100);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), std::runtime_error);
}

TEST_CASE("image tensor conversion") {
  ImageTensor img = psgan::testing::random_image(64, 17);
  ImageTensor back = to_image(to_tensor<float>(img));
  CHECK((back.data == img.data).all());
  CHECK_THROWS_AS(to_image(Tensor<float>::zeros(Shape{1, 1, 4, 4})), ShapeError);
}
