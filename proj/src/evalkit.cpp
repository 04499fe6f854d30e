#include "psgan/evalkit.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace psgan::eval {

double landmark_cos_sim(const Landmarks& a, const Landmarks& b) {
  const Eigen::Map<const Eigen::Matrix<float, 2 * kLandmarkCount, 1>> la(a.data()), lb(b.data());
  const double na = la.cast<double>().norm(), nb = lb.cast<double>().norm();
  if (na == 0 || nb == 0) throw EvalError("landmark_cos_sim: zero-norm landmark vector");
  const double c = la.cast<double>().dot(lb.cast<double>()) / (na * nb);
  return std::clamp(c, 0.0, 1.0);
}

Eigen::VectorXd MeanPoolEmbedder::embed(const ImageTensor& img) const {
  Eigen::VectorXd e(3);
  const Eigen::Index plane = img.plane();
  for (int c = 0; c < 3; ++c) e(c) = img.data.segment(c * plane, plane).cast<double>().mean();
  return e;
}

std::unique_ptr<Embedder> make_embedder(const std::string& name) {
  if (name == "mean-pool") return std::make_unique<MeanPoolEmbedder>();
  if (name == "none" || name.empty()) return nullptr;
  throw EvalError("embedder '" + name + "' is not available (supported: mean-pool, none)");
}

double identity_similarity(const ImageTensor& a, const ImageTensor& b, const Embedder* embedder) {
  if (!embedder) throw EvalError("identity_similarity: no embedder configured");
  const Eigen::VectorXd ea = embedder->embed(a), eb = embedder->embed(b);
  const double na = ea.norm(), nb = eb.norm();
  if (na == 0 || nb == 0) throw EvalError("identity_similarity: zero-norm embedding");
  return ea.dot(eb) / (na * nb);
}

double region_hist_distance(const ImageTensor& img_a, const ParsingMap& parsing_a, const ImageTensor& img_b,
                            const ParsingMap& parsing_b, Region region) {
  const auto label = std::uint8_t(region);
  auto histograms = [label](const ImageTensor& img, const ParsingMap& p, std::array<std::array<double, 256>, 3>& h) {
    if (p.rows() != img.height || p.cols() != img.width) throw EvalError("region_hist_distance: parsing size mismatch");
    const Eigen::Index plane = img.plane();
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < plane; ++i) {
      if (p.data()[i] != label) continue;
      ++n;
      for (int c = 0; c < 3; ++c) h[c][to_u8(img.data(c * plane + i))] += 1;
    }
    return n;
  };
  std::array<std::array<double, 256>, 3> ha{}, hb{};
  const std::size_t na = histograms(img_a, parsing_a, ha), nb = histograms(img_b, parsing_b, hb);
  if (na == 0 || nb == 0)
    throw EvalError(std::string("region_hist_distance: region '") + region_name(region) + "' is empty");
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    // W1 on a unit-spaced grid is the L1 distance between the CDFs.
    double fa = 0, fb = 0, d = 0;
    for (int g = 0; g < 255; ++g) {
      fa += ha[c][g] / double(na);
      fb += hb[c][g] / double(nb);
      d += std::abs(fa - fb);
    }
    total += d / 255.0;
  }
  return total / 3.0;
}

double hue_of(int r, int g, int b) {
  const int hi = std::max({r, g, b}), lo = std::min({r, g, b});
  if (hi == lo) return 0.0;
  const double d = hi - lo;
  double h;
  if (hi == r)
    h = (g - b) / d;
  else if (hi == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  return h < 0 ? h + 1.0 : h;
}

double region_hue_distance(const ImageTensor& img_a, const ParsingMap& parsing_a, const ImageTensor& img_b,
                           const ParsingMap& parsing_b, Region region) {
  constexpr int kBins = 360;
  const auto label = std::uint8_t(region);
  auto histogram = [label](const ImageTensor& img, const ParsingMap& p) {
    if (p.rows() != img.height || p.cols() != img.width) throw EvalError("region_hue_distance: parsing size mismatch");
    const Eigen::Index plane = img.plane();
    Eigen::ArrayXd h = Eigen::ArrayXd::Zero(kBins);
    for (Eigen::Index i = 0; i < plane; ++i) {
      if (p.data()[i] != label) continue;
      const double v = hue_of(to_u8(img.data(i)), to_u8(img.data(plane + i)), to_u8(img.data(2 * plane + i)));
      h(std::min(kBins - 1, int(v * kBins))) += 1;
    }
    return h;
  };
  const Eigen::ArrayXd ha = histogram(img_a, parsing_a), hb = histogram(img_b, parsing_b);
  if (ha.sum() == 0 || hb.sum() == 0)
    throw EvalError(std::string("region_hue_distance: region '") + region_name(region) + "' is empty");
  // On the circle W1 = min_c sum |F_a - F_b - c| / bins, minimised by the median.
  Eigen::ArrayXd cdf(kBins);
  double fa = 0, fb = 0;
  for (int i = 0; i < kBins; ++i) {
    fa += ha(i) / ha.sum();
    fb += hb(i) / hb.sum();
    cdf(i) = fa - fb;
  }
  std::vector<double> sorted(cdf.begin(), cdf.end());
  std::nth_element(sorted.begin(), sorted.begin() + kBins / 2, sorted.end());
  return (cdf - sorted[kBins / 2]).abs().sum() / kBins;
}

nlohmann::json PairReport::to_json() const {
  nlohmann::json j{{"pair_id", pair_id},
                   {"cos_sim", cos_sim},
                   {"region_distances", {{"lip", lip}, {"skin", skin}, {"eye", eye}}},
                   {"lip_hue_distance", lip_hue}};
  if (identity_sim) j["identity_sim"] = *identity_sim;
  return j;
}

std::vector<PairReport> evaluate(const std::vector<FaceAsset>& assets, const infer::Bundle& bundle,
                                 const Embedder* embedder, const LandmarkDetector& detector, float w) {
  std::vector<PairReport> rows;
  for (const auto& x : assets) {
    if (x.domain != Domain::NonMakeup) continue;
    for (const auto& y : assets) {
      if (y.domain != Domain::Makeup) continue;
      const ImageTensor out = infer::transfer(x, y, bundle, w);
      PairReport r;
      r.pair_id = x.id + "__" + y.id;
      r.cos_sim = landmark_cos_sim(x.landmarks, detector ? detector(out) : x.landmarks);
      if (embedder) r.identity_sim = identity_similarity(x.image, out, embedder);
      r.lip = region_hist_distance(out, x.parsing, y.image, y.parsing, Region::Lip);
      r.skin = region_hist_distance(out, x.parsing, y.image, y.parsing, Region::Skin);
      r.eye = region_hist_distance(out, x.parsing, y.image, y.parsing, Region::Eye);
      r.lip_hue = region_hue_distance(out, x.parsing, y.image, y.parsing, Region::Lip);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

void write_report(const std::vector<PairReport>& rows, std::ostream& out) {
  for (const auto& r : rows) out << r.to_json().dump() << '\n';
}

}  // namespace psgan::eval
