// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include "psgan/evalkit.hpp"
#include "psgan/inference.hpp"
#include "psgan/service.hpp"
#include "psgan/trainer.hpp"

#include "cli_runner.hpp"
#include "grad_check.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <chrono>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

using namespace psgan;
using psgan::testing::TempDir;
using MatD = amm::Matrix<double>;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome amm_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.0, 8.0);
  double worst = 0, worst_sum = 0;
  long cross = 0, rows = 0, entries = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 1 + int(rng() % 8), w = 1 + int(rng() % 8), c = 1 + int(rng() % 6);
    const double vw = trial % 4 == 0 ? 0.0 : 0.01 * double(1 + rng() % 50);
    MatD vx(h * w, c), vy(h * w, c);
    for (Eigen::Index i = 0; i < vx.size(); ++i) vx.data()[i] = n(rng), vy.data()[i] = n(rng);
    Landmarks lx, ly;
    for (int k = 0; k < kLandmarkCount; ++k) lx(k, 0) = float(u(rng)), lx(k, 1) = float(u(rng)), ly(k, 0) = float(u(rng)), ly(k, 1) = float(u(rng));
    const MatD px = amm::normalize_rows<double>(amm::rel_pos_features<double>(h, w, lx));
    const MatD py = amm::normalize_rows<double>(amm::rel_pos_features<double>(h, w, ly));
    std::vector<std::uint8_t> lab_x(h * w), lab_y(h * w);
    for (auto& v : lab_x) v = std::uint8_t(rng() % 4);
    for (auto& v : lab_y) v = std::uint8_t(rng() % 4);

    const auto a = amm::attentive_matrix<double>(vx, vy, px, py, lab_x, lab_y, vw);
    const auto ref = oracle::attention(vx, vy, px, py, lab_x, lab_y, vw);
    for (Eigen::Index i = 0; i < a.weights.rows(); ++i) {
      o.require(bool(a.valid[i]) == ref.valid[i], "validity flags");
      double sum = 0;
      for (Eigen::Index j = 0; j < a.weights.cols(); ++j) {
        ++entries;
        worst = std::max(worst, std::abs(a.weights(i, j) - double(ref.a[i][j])));
        if ((lab_x[i] != lab_y[j] || lab_x[i] == 0) && a.weights(i, j) != 0.0) ++cross;
        sum += a.weights(i, j);
      }
      if (a.valid[i]) {
        ++rows;
        worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      }
    }
  }
  const double t = seconds_since(t0);
  o.require(worst <= 1e-6, "oracle agreement");
  o.require(worst_sum <= 1e-5, "row sums");
  o.require(cross == 0, "cross-region entries");
  o.require(t < 10.0, "runtime");
  o.detail << "max|A-oracle| " << worst << ", max|rowsum-1| " << worst_sum << " over " << rows << " valid rows, "
           << cross << " nonzero cross-region of " << entries << " entries";
  return o;
}

Outcome self_attention() {
  Outcome o;
  nn::ArchSpec arch;
  arch.input_size = 64;
  arch.base_width = 8;
  arch.disc_width = 8;
  const auto bundle = infer::Bundle::create(arch, 5);
  long valid = 0, hits = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto pair = synth_fixture(seed, 64);
    for (const FaceAsset* f : {&pair.plain, &pair.makeup}) {
      const auto a = infer::attention_matrix(bundle, *f, *f, 0.0f);
      for (Eigen::Index i = 0; i < a.weights.rows(); ++i) {
        if (!a.valid[std::size_t(i)]) continue;
        ++valid;
        Eigen::Index arg;
        a.weights.row(i).maxCoeff(&arg);
        hits += arg == i;
      }
    }
  }
  o.require(valid > 0 && hits == valid, "diagonal argmax");
  o.detail << hits << "/" << valid << " valid rows peak on the diagonal (8 fixtures, w = 0)";
  return o;
}

Outcome histogram_matching() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  double worst_cdf_excess = 0;
  int worst_self = 0, mismatched = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto population = [&] {
      std::vector<std::uint8_t> v(1 + rng() % 500);
      const int centre = int(rng() % 256), spread = 1 + int(rng() % 80);
      for (auto& x : v)
        x = std::uint8_t(std::clamp(rng() % 5 == 0 ? int(rng() % 256) : centre + int(rng() % (2 * spread + 1)) - spread, 0, 255));
      return v;
    };
    const auto src = population(), ref = population();
    const auto out = losses::histogram_match_channel(src, ref);
    if (out != oracle::histogram_match(src, ref)) ++mismatched;
    const auto co = oracle::cdf(out), cr = oracle::cdf(ref);
    for (int g = 0; g < 256; ++g)
      worst_cdf_excess = std::max(worst_cdf_excess, std::abs(co[g] - cr[g]) - 1.0 / double(src.size()));
    const auto self = losses::histogram_match_channel(src, src);
    for (std::size_t i = 0; i < src.size(); ++i) worst_self = std::max(worst_self, std::abs(int(self[i]) - int(src[i])));
  }

  long background = 0, changed = 0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto x = synth_fixture(seed, 64).plain;
    const auto y = synth_fixture(seed + 10, 64).makeup;
    const auto gt = losses::build_pseudo_gt(x, y);
    const Eigen::Index plane = x.image.plane();
    for (Eigen::Index i = 0; i < plane; ++i)
      if (x.parsing.data()[i] == 0)
        for (int c = 0; c < 3; ++c, ++background) changed += gt.image.data(c * plane + i) != x.image.data(c * plane + i);
  }
  const double t = seconds_since(t0);
  o.require(worst_cdf_excess <= 1e-12, "CDF within 1/n");
  o.require(worst_self <= 1, "self-match");
  o.require(changed == 0, "background unchanged");
  o.require(t < 30.0, "runtime");
  o.detail << "1000 populations: max(|CDF diff| - 1/n) " << worst_cdf_excess << ", self-match max shift "
           << worst_self << ", oracle mismatches " << mismatched << "; background " << changed << "/" << background
           << " values changed";
  return o;
}

struct CompositionStats {
  double partial_f = 0, partial_i = 0, degree_f = 0, degree_i = 0, affinity = 0, spread = 0;
};

template <typename Scalar>
CompositionStats composition_at() {
  nn::ArchSpec arch;
  arch.input_size = 64;
  arch.base_width = 8;
  arch.disc_width = 8;
  auto b = infer::BundleT<Scalar>::create(arch, 17);
  // Widen the untrained style heads so different references give visibly
  // different styles.
  for (auto& [name, p] : b.named_parameters())
    if ((name.find("to_gamma") != std::string::npos || name.find("to_beta") != std::string::npos) &&
        name.ends_with(".weight"))
      p.mutable_value() *= Scalar(30);
  const FaceAsset x = synth_fixture(1, 64).plain, y1 = synth_fixture(2, 64).makeup, y2 = synth_fixture(3, 64).makeup;
  auto req = [&](const FaceAsset* r2, float alpha, std::vector<Region> regions) {
    infer::StyleRequest r;
    r.source = &x;
    r.y1 = &y1;
    r.y2 = r2;
    r.alpha = alpha;
    r.regions = std::move(regions);
    return infer::modulated_features(b, r);
  };
  auto fdiff = [](const auto& a, const auto& c) { return double((a.data - c.data).abs().maxCoeff()); };

  CompositionStats s;
  const auto plain_f = req(nullptr, 1.0f, infer::all_regions());
  const auto plain_i = infer::transfer(x, y1, b);
  s.partial_f = fdiff(req(&y2, 1.0f, infer::all_regions()), plain_f);
  s.partial_i = fdiff(infer::transfer_partial(x, y1, y2, infer::all_regions(), b), plain_i);
  s.degree_f = fdiff(req(nullptr, 1.0f, infer::all_regions()), plain_f);
  s.degree_i = fdiff(infer::transfer_degree(x, y1, 1.0f, b), plain_i);
  for (const FaceAsset* r2 : {static_cast<const FaceAsset*>(nullptr), &y2}) {
    const auto e1 = req(r2, 1.0f, infer::all_regions()), e0 = req(r2, 0.0f, infer::all_regions());
    for (float a : {0.1f, 0.25f, 0.5f, 0.75f, 0.9f}) {
      const auto mid = req(r2, a, infer::all_regions());
      const Scalar as(a);
      s.affinity = std::max(s.affinity, double((mid.data - (as * e1.data + (1 - as) * e0.data)).abs().maxCoeff()));
    }
  }
  s.spread = fdiff(plain_f, req(&y2, 0.0f, infer::all_regions()));
  return s;
}

// Checked in double. The float pipeline is reported alongside; its affinity
// sits at a few ulps of features of magnitude ~8, right around 1e-6.
Outcome composition() {
  Outcome o;
  const CompositionStats d = composition_at<double>(), f = composition_at<float>();
  o.require(d.partial_f <= 1e-6 && d.degree_f <= 1e-6, "feature-level reductions");
  o.require(d.partial_i <= 1e-5 && d.degree_i <= 1e-5, "image-level reductions");
  o.require(d.affinity <= 1e-6, "alpha affinity");
  o.require(d.spread > 1e-3, "references produce distinct styles");
  o.detail << "double: partial(all) " << d.partial_f << "/" << d.partial_i << ", degree(1) " << d.degree_f << "/"
           << d.degree_i << " (feature/image), affinity " << d.affinity << ", y1 vs y2 gap " << d.spread
           << "; float: partial " << f.partial_f << "/" << f.partial_i << ", degree " << f.degree_f << "/"
           << f.degree_i << ", affinity " << f.affinity;
  return o;
}

Outcome losses_and_gradients() {
  using psgan::testing::grad_check;
  using psgan::testing::random_param;
  using TensorD = psgan::testing::TensorD;
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(303);
  const ag::Shape img{1, 3, 8, 8}, patch{1, 1, 6, 6};
  TensorD a = random_param(img, rng), b2 = random_param(img, rng), c = random_param(img, rng);
  TensorD rl = random_param(patch, rng, 3), fl = random_param(patch, rng, 3), rl2 = random_param(patch, rng, 3),
          fl2 = random_param(patch, rng, 3);
  losses::IdentityFeatures<double> id;

  // Identities.
  const TensorD zero = TensorD::filled(patch, 0.0);
  double identity_max = 0;
  identity_max = std::max(identity_max, losses::cycle_loss(a, a, b2, b2).item());
  identity_max = std::max(identity_max, losses::perceptual_loss(a, a, &id).item());
  identity_max = std::max(identity_max, losses::region_loss(a, a).item());
  DenseCorrespondence pts(3, 2);
  pts << 1.5, 2.0, 6.25, 3.5, 0.0, 7.0;
  identity_max = std::max(identity_max, losses::detail_loss(a, a, pts, pts).item());
  const double big = 60;
  identity_max = std::max(identity_max, losses::adv_loss_d_logits(TensorD::filled(patch, big), TensorD::filled(patch, big),
                                                                  TensorD::filled(patch, -big), TensorD::filled(patch, -big))
                                            .item() - 4 * losses::kProbEps * 1.0000001);
  identity_max = std::max(identity_max, losses::adv_loss_g_logits(TensorD::filled(patch, big), TensorD::filled(patch, big)).item() -
                                            2 * losses::kProbEps * 1.0000001);

  // Closed forms.
  const double d_half = losses::adv_loss_d_logits(zero, zero, zero, zero).item();
  const double g_half = losses::adv_loss_g_logits(zero, zero).item();
  const losses::LossReport unit = losses::total_losses({1, 1, 1, 1, 1, 1}, losses::LossWeights{});
  const double closed = std::max({std::abs(d_half - 4 * std::log(2.0)), std::abs(g_half - 2 * std::log(2.0)),
                                  std::abs(unit.loss_g - 15.005)});

  // Finite differences.
  DenseCorrespondence px(4, 2), py(4, 2);
  px << 0.5, 0.25, 3.2, 6.9, 7.0, 7.0, 4.4, 1.1;
  py << 1.5, 2.25, 2.2, 5.9, 6.0, 3.0, 0.4, 0.1;
  const TensorD cref = c.detach();
  std::vector<double> rels = {
      grad_check([&] { return losses::adv_loss_d_logits(rl, rl2, fl, fl2); }, {rl, rl2, fl, fl2}, 36).rel,
      grad_check([&] { return losses::adv_loss_g_logits(fl, fl2); }, {fl, fl2}, 36).rel,
      grad_check([&] { return losses::cycle_loss(cref, a, cref, b2); }, {a, b2}, 60).rel,
      grad_check([&] { return losses::perceptual_loss(a, b2, &id); }, {a, b2}, 60).rel,
      grad_check([&] { return losses::region_loss(a, cref); }, {a}, 60).rel,
      grad_check([&] { return losses::detail_loss(a, cref, px, py); }, {a}, 192).rel,
  };
  const double worst_rel = *std::max_element(rels.begin(), rels.end());
  const double t = seconds_since(t0);
  o.require(identity_max <= 0.0, "identity inputs give 0");
  o.require(closed <= 1e-6, "closed-form values");
  o.require(worst_rel <= 1e-3, "finite-difference gradients");
  o.require(t < 120.0, "runtime");
  o.detail << "L_D(0.5) " << std::setprecision(10) << d_half << ", L_G(0.5) " << g_half << ", weighted total " << unit.loss_g
           << std::setprecision(6) << "; max closed-form error " << closed << "; worst FD relative error " << worst_rel;
  return o;
}

// ---------------------------------------------------------------------------
// Overfit smoke run

constexpr int kOverfitSteps = 300;
constexpr int kOverfitWidth = 32;
constexpr std::uint64_t kOverfitSeed = 1;

Outcome overfit() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<FaceAsset> assets;
  for (std::uint64_t s = 1; s <= 2; ++s) {
    auto p = synth_fixture(s, 64);
    assets.push_back(p.plain);
    assets.push_back(p.makeup);
  }
  train::TrainConfig cfg;  // default loss weights, lr, betas and batch size
  cfg.image_size = 64;
  cfg.base_width = kOverfitWidth;
  cfg.disc_width = kOverfitWidth;
  cfg.seed = kOverfitSeed;
  train::Trainer trainer(train::Corpus::from_assets(assets), cfg);

  std::vector<double> cyc;
  bool finite = true;
  for (int i = 0; i < kOverfitSteps; ++i) {
    try {
      const auto r = trainer.step();
      cyc.push_back(r.terms.g_cyc);
      finite = finite && std::isfinite(r.loss_d) && std::isfinite(r.loss_g);
    } catch (const losses::NumericalError& e) {
      finite = false;
      o.detail << "aborted at step " << i << " (" << e.what() << ") ";
      break;
    }
  }
  o.require(finite, "finite losses");
  if (!finite) return o;

  double early = 0, late = 0;
  for (int i = 0; i < 10; ++i) early += cyc[std::size_t(i)] / 10, late += cyc[cyc.size() - 10 + std::size_t(i)] / 10;

  double hue_before = 0, hue_after = 0, rgb_before = 0, rgb_after = 0;
  for (const FaceAsset& x : assets) {
    if (x.domain != Domain::NonMakeup) continue;
    for (const FaceAsset& y : assets) {
      if (y.domain != Domain::Makeup) continue;
      const ImageTensor out = infer::transfer(x, y, trainer.bundle());
      hue_before += eval::region_hue_distance(x.image, x.parsing, y.image, y.parsing, Region::Lip);
      hue_after += eval::region_hue_distance(out, x.parsing, y.image, y.parsing, Region::Lip);
      rgb_before += eval::region_hist_distance(x.image, x.parsing, y.image, y.parsing, Region::Lip);
      rgb_after += eval::region_hist_distance(out, x.parsing, y.image, y.parsing, Region::Lip);
    }
  }
  const double cyc_drop = 1.0 - late / early;
  const double hue_drop = 1.0 - hue_after / hue_before;
  const double t = seconds_since(t0);
  o.require(cyc_drop >= 0.5, "cycle loss drop");
  o.require(hue_drop >= 0.3, "lip distance drop");
  o.require(t < 3600.0, "runtime");
  o.detail << kOverfitSteps << " steps, width " << kOverfitWidth << ": cycle " << early << " -> " << late << " ("
           << std::lround(100 * cyc_drop) << "% drop); lip hue W1 " << hue_before / 4 << " -> " << hue_after / 4
           << " (" << std::lround(100 * hue_drop) << "% drop); lip RGB W1 " << rgb_before / 4 << " -> "
           << rgb_after / 4 << " (info)";
  return o;
}

// ---------------------------------------------------------------------------

std::vector<FaceAsset> small_corpus() {
  std::vector<FaceAsset> a;
  for (std::uint64_t s = 1; s <= 2; ++s) {
    auto p = synth_fixture(s, 64);
    a.push_back(p.plain);
    a.push_back(p.makeup);
  }
  return a;
}

train::TrainConfig small_config(std::uint64_t seed) {
  train::TrainConfig c;
  c.image_size = 64;
  c.base_width = 4;
  c.disc_width = 4;
  c.seed = seed;
  return c;
}

Outcome determinism() {
  Outcome o;
  TempDir dir("accept_det");
  train::Trainer a(train::Corpus::from_assets(small_corpus()), small_config(8));
  train::Trainer b(train::Corpus::from_assets(small_corpus()), small_config(8));
  int identical = 0;
  for (int i = 0; i < 10; ++i) {
    const auto ra = a.step(), rb = b.step();
    identical += ra.to_json(i).dump() == rb.to_json(i).dump();
  }

  a.save(dir / "a.ckpt");
  const infer::Bundle l1 = nn::load_checkpoint(dir / "a.ckpt"), l2 = nn::load_checkpoint(dir / "a.ckpt");
  const auto assets = small_corpus();
  const std::string png = encode_image_png(infer::transfer(assets[0], assets[1], l1));
  const bool bytes = png == encode_image_png(infer::transfer(assets[0], assets[1], l1)) &&
                     png == encode_image_png(infer::transfer(assets[0], assets[1], l2)) &&
                     encode_image_png(infer::remove(assets[1], l1)) == encode_image_png(infer::remove(assets[1], l2));

  train::Trainer resumed(train::Corpus::from_assets(small_corpus()), small_config(8));
  resumed.resume(dir / "a.ckpt");
  double resume_gap = 0;
  for (int i = 0; i < 5; ++i) {
    const auto ra = a.step(), rr = resumed.step();
    resume_gap = std::max({resume_gap, std::abs(ra.loss_g - rr.loss_g), std::abs(ra.loss_d - rr.loss_d)});
  }
  o.require(identical == 10, "seeded LossReports");
  o.require(bytes, "byte-deterministic inference");
  o.require(resume_gap <= 1e-5, "resume");
  o.detail << identical << "/10 identical LossReports; inference bytes " << (bytes ? "identical" : "differ")
           << "; max resume gap over 5 steps " << resume_gap;
  return o;
}

Outcome cli_service_parity() {
  Outcome o;
  TempDir dir("accept_parity");
  nn::ArchSpec arch;
  arch.input_size = 64;
  arch.base_width = 8;
  arch.disc_width = 8;
  const auto ckpt = dir / "model.ckpt";
  nn::save_checkpoint(nn::NetworkBundle<float>::create(arch, 21), ckpt);

  service::ServiceConfig cfg;
  cfg.checkpoint = ckpt;
  cfg.asset_dir = dir / "store";
  service::Service svc(cfg);
  const int port = svc.bind_any_port();
  std::thread server([&] { svc.listen_after_bind(); });
  while (!svc.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(120, 0);

  auto upload = [&](const FaceAsset& a) {
    const ManifestRecord r = save_asset(a, dir.path());
    httplib::MultipartFormDataItems items{
        {"image", psgan::testing::slurp(r.image_path), "image.png", "image/png"},
        {"parsing", psgan::testing::slurp(r.parsing_path), "parsing.png", "image/png"},
        {"landmarks", psgan::testing::slurp(r.landmarks_path), "landmarks.json", "application/json"}};
    auto res = client.Post("/api/assets", items);
    return res && res->status == 201 ? json::parse(res->body).at("asset_id").get<std::string>() : std::string();
  };
  const std::string x = upload(synth_fixture(1, 64).plain), y = upload(synth_fixture(2, 64).makeup);

  int compared = 0, equal = 0;
  struct Case {
    json body;
    std::string cli;
  };
  const auto store = dir / "store";
  const std::vector<Case> cases = {
      {{{"source_id", x}, {"reference_ids", {y}}, {"alpha", 1.0}},
       "transfer --source " + (store / x).string() + " --reference " + (store / y).string() + " --alpha 1.0"},
      {{{"source_id", x}, {"reference_ids", {y}}, {"regions", {"lip"}}},
       "transfer --source " + (store / x).string() + " --reference " + (store / y).string() + " --regions lip"},
      {{{"source_id", x}, {"reference_ids", {y}}, {"alpha", 0.5}},
       "transfer --source " + (store / x).string() + " --reference " + (store / y).string() + " --alpha 0.5"},
      {{{"source_id", y}, {"mode", "remove"}}, "remove --source " + (store / y).string()},
  };
  if (!x.empty() && !y.empty()) {
    for (const auto& c : cases) {
      auto res = client.Post("/api/transfer", c.body.dump(), "application/json");
      const auto out = dir / ("cli_" + std::to_string(compared) + ".png");
      const auto run = psgan::testing::run_cli(c.cli + " --checkpoint " + ckpt.string() + " --out " + out.string(), dir.path());
      ++compared;
      equal += res && res->status == 200 && run.code == 0 && psgan::testing::slurp(out) == res->body;
    }
  }
  svc.stop();
  server.join();
  o.require(compared == 4 && equal == compared, "byte-identical PNG");
  o.detail << equal << "/" << cases.size() << " request kinds byte-identical between CLI and HTTP";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<std::string> only;
  app.add_option("--only", only, "run only the named criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, Outcome (*)()>> criteria = {
      {"amm-correctness", amm_correctness},   {"self-attention-peak", self_attention},
      {"histogram-matching", histogram_matching}, {"composition-reductions", composition},
      {"loss-identities-gradients", losses_and_gradients}, {"overfit-smoke", overfit},
      {"determinism", determinism},           {"cli-service-parity", cli_service_parity},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(27) << name << " " << o.detail.str()
              << " [" << std::fixed << std::setprecision(1) << seconds_since(t0) << " s]" << std::defaultfloat
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
