#include "psgan/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace psgan::losses {

void LossWeights::validate() const {
  for (double w : {adv, cyc, per, region, detail})
    if (!std::isfinite(w) || w < 0) throw std::invalid_argument("loss weights must be finite and non-negative");
}

nlohmann::json LossReport::to_json(long step) const {
  return {{"step", step},           {"d_adv", terms.d_adv},       {"g_adv", terms.g_adv},
          {"g_cyc", terms.g_cyc},   {"g_per", terms.g_per},       {"g_region", terms.g_region},
          {"g_detail", terms.g_detail}, {"loss_d", loss_d},       {"loss_g", loss_g}};
}

LossReport total_losses(const LossTerms& t, const LossWeights& w) {
  const std::pair<const char*, double> named[] = {{"d_adv", t.d_adv},   {"g_adv", t.g_adv},       {"g_cyc", t.g_cyc},
                                                  {"g_per", t.g_per},   {"g_region", t.g_region}, {"g_detail", t.g_detail}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v)) throw NumericalError(name);
  LossReport r;
  r.terms = t;
  r.loss_d = w.adv * t.d_adv;
  r.loss_g = w.adv * t.g_adv + w.cyc * t.g_cyc + w.per * t.g_per + w.region * t.g_region + w.detail * t.g_detail;
  return r;
}

std::vector<std::uint8_t> histogram_match_channel(std::span<const std::uint8_t> src, std::span<const std::uint8_t> ref) {
  if (src.empty() || ref.empty()) throw std::invalid_argument("histogram_match_channel: empty population");
  // Reference CDF as cumulative counts.
  std::array<std::uint64_t, 256> ref_cum{};
  for (std::uint8_t v : ref) ++ref_cum[v];
  for (int g = 1; g < 256; ++g) ref_cum[g] += ref_cum[g - 1];
  const std::uint64_t n = src.size(), m = ref.size();

  // Stable rank order by value (counting sort keeps positional order on ties).
  std::array<std::uint64_t, 257> start{};
  for (std::uint8_t v : src) ++start[std::size_t(v) + 1];
  for (int g = 1; g <= 256; ++g) start[g] += start[g - 1];
  std::vector<std::uint8_t> out(src.size());
  int level = 0;
  std::vector<std::size_t> order(src.size());
  {
    auto next = start;
    for (std::size_t i = 0; i < src.size(); ++i) order[next[src[i]]++] = i;
  }
  for (std::uint64_t r = 0; r < n; ++r) {
    // Smallest g with ref_cum[g] / m >= (r + 1) / n, in exact integer arithmetic.
    while (ref_cum[level] * n < (r + 1) * m) ++level;
    out[order[r]] = std::uint8_t(level);
  }
  return out;
}

PseudoGroundTruth build_pseudo_gt(const FaceAsset& x, const FaceAsset& y1) {
  if (x.parsing.size() == 0 || y1.parsing.size() == 0)
    throw std::invalid_argument("build_pseudo_gt: both assets need parsing maps");
  PseudoGroundTruth out;
  out.image = x.image;
  const Eigen::Index px = x.image.plane(), py = y1.image.plane();
  for (Region region : kFaceRegions) {
    const auto label = std::uint8_t(region);
    std::vector<Eigen::Index> xi, yi;
    for (Eigen::Index i = 0; i < px; ++i)
      if (x.parsing.data()[i] == label) xi.push_back(i);
    for (Eigen::Index i = 0; i < py; ++i)
      if (y1.parsing.data()[i] == label) yi.push_back(i);
    if (xi.empty() || yi.empty()) {
      out.warnings.push_back(std::string("region '") + region_name(region) + "' empty in " +
                             (xi.empty() ? x.id : y1.id) + "; copied from source");
      continue;
    }
    std::vector<std::uint8_t> src(xi.size()), ref(yi.size());
    for (int c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < xi.size(); ++k) src[k] = to_u8(x.image.data(c * px + xi[k]));
      for (std::size_t k = 0; k < yi.size(); ++k) ref[k] = to_u8(y1.image.data(c * py + yi[k]));
      const auto matched = histogram_match_channel(src, ref);
      for (std::size_t k = 0; k < xi.size(); ++k) out.image.data(c * px + xi[k]) = from_u8(matched[k]);
    }
  }
  return out;
}

}  // namespace psgan::losses
