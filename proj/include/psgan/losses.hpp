#pragma once

// Training objectives: adversarial, cycle, perceptual, makeup-region (with
// histogram-matched pseudo ground truth) and makeup-detail losses, plus the
// weighted totals reported per step.

#include "psgan/autograd.hpp"
#include "psgan/face_assets.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace psgan::losses {

using ag::Tensor;

/// Probability clamp applied inside the adversarial log terms.
constexpr double kProbEps = 1e-7;

struct LossWeights {
  double adv = 1.0;
  double cyc = 10.0;
  double per = 0.005;
  double region = 1.0;
  double detail = 3.0;

  void validate() const;
};

struct LossTerms {
  double d_adv = 0;
  double g_adv = 0;
  double g_cyc = 0;
  double g_per = 0;
  double g_region = 0;
  double g_detail = 0;
};

struct LossReport {
  LossTerms terms;
  double loss_d = 0;
  double loss_g = 0;

  /// {"step", "d_adv", "g_adv", "g_cyc", "g_per", "g_region", "g_detail", "loss_d", "loss_g"}
  nlohmann::json to_json(long step) const;
};

/// A loss term evaluated to NaN or infinity.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(std::string term)
      : std::runtime_error("non-finite loss term '" + term + "'"), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// L_D = adv * d_adv; L_G = sum of weighted generator terms. Throws
/// NumericalError naming the first non-finite term.
LossReport total_losses(const LossTerms& terms, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Adversarial

/// -E[log D_X(x)] - E[log D_Y(y1)] - E[log(1 - D_X(R(y_r)))] - E[log(1 - D_Y(T(x, y1)))],
/// each expectation averaged over the patch grid.
template <typename Scalar>
Tensor<Scalar> adv_loss_d_logits(const Tensor<Scalar>& real_x, const Tensor<Scalar>& real_y,
                                 const Tensor<Scalar>& fake_x, const Tensor<Scalar>& fake_y) {
  const Scalar eps = Scalar(kProbEps);
  return ag::neg_log_likelihood(real_x, true, eps) + ag::neg_log_likelihood(real_y, true, eps) +
         ag::neg_log_likelihood(fake_x, false, eps) + ag::neg_log_likelihood(fake_y, false, eps);
}

/// Discriminator-side loss from networks; fakes are detached here.
template <typename Scalar, typename DiscX, typename DiscY>
Tensor<Scalar> adv_loss_d(const DiscX& d_x, const DiscY& d_y, const Tensor<Scalar>& real_x, const Tensor<Scalar>& real_y,
                          const Tensor<Scalar>& fake_x, const Tensor<Scalar>& fake_y) {
  return adv_loss_d_logits(d_x(real_x), d_y(real_y), d_x(fake_x.detach()), d_y(fake_y.detach()));
}

/// -E[log D_X(R(y_r))] - E[log D_Y(T(x, y1))]
template <typename Scalar>
Tensor<Scalar> adv_loss_g_logits(const Tensor<Scalar>& fake_x, const Tensor<Scalar>& fake_y) {
  const Scalar eps = Scalar(kProbEps);
  return ag::neg_log_likelihood(fake_x, true, eps) + ag::neg_log_likelihood(fake_y, true, eps);
}

template <typename Scalar, typename DiscX, typename DiscY>
Tensor<Scalar> adv_loss_g(const DiscX& d_x, const DiscY& d_y, const Tensor<Scalar>& fake_x,
                          const Tensor<Scalar>& fake_y) {
  return adv_loss_g_logits(d_x(fake_x), d_y(fake_y));
}

// ---------------------------------------------------------------------------
// Reconstruction terms

/// mean|R(T(x, y1)) - x| + mean|T(R(y_r), y_r) - y_r|
template <typename Scalar>
Tensor<Scalar> cycle_loss(const Tensor<Scalar>& x, const Tensor<Scalar>& rec_x, const Tensor<Scalar>& y_r,
                          const Tensor<Scalar>& rec_y) {
  return ag::mean_abs_diff(rec_x, x) + ag::mean_abs_diff(rec_y, y_r);
}

/// Feature adapter for the perceptual loss.
template <typename Scalar>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Tensor<Scalar> extract(const Tensor<Scalar>& img) const = 0;
  virtual std::string name() const = 0;
};

/// Returns the image itself; lets the suite run without pretrained weights.
template <typename Scalar>
class IdentityFeatures final : public FeatureExtractor<Scalar> {
 public:
  Tensor<Scalar> extract(const Tensor<Scalar>& img) const override { return img; }
  std::string name() const override { return "identity"; }
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Resolves an extractor by configuration name. Only "identity" ships; any
/// other name (e.g. a pretrained VGG adapter) is a configuration error.
template <typename Scalar>
std::unique_ptr<FeatureExtractor<Scalar>> make_extractor(const std::string& name) {
  if (name == "identity") return std::make_unique<IdentityFeatures<Scalar>>();
  throw ConfigError("perceptual extractor '" + name + "' is not available (supported: identity)");
}

/// mean((F(a) - F(b))^2)
template <typename Scalar>
Tensor<Scalar> perceptual_loss(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const FeatureExtractor<Scalar>* extractor) {
  if (!extractor) throw ConfigError("perceptual loss requires a configured feature extractor");
  return ag::mean_sq_diff(extractor->extract(a), extractor->extract(b));
}

/// mean((T(x, y1) - HM(x, y1))^2); the pseudo ground truth is a constant.
template <typename Scalar>
Tensor<Scalar> region_loss(const Tensor<Scalar>& transferred, const Tensor<Scalar>& pseudo_gt) {
  return ag::mean_sq_diff(transferred, pseudo_gt.detach());
}

/// Mean absolute difference over RGB and the K corresponding points, with
/// bilinear sampling at fractional coordinates.
template <typename Scalar>
Tensor<Scalar> detail_loss(const Tensor<Scalar>& transferred, const Tensor<Scalar>& y1, const DenseCorrespondence& pts_x,
                           const DenseCorrespondence& pts_y) {
  if (pts_x.rows() != pts_y.rows() || pts_x.rows() == 0)
    throw std::invalid_argument("detail_loss: correspondence sets must be non-empty and of equal size");
  return ag::mean_abs_diff(ag::bilinear_gather(transferred, pts_x), ag::bilinear_gather(y1.detach(), pts_y));
}

// ---------------------------------------------------------------------------
// Histogram matching

/// Matches `src` to the distribution of `ref`. Pixels are ranked by
/// (value, position); the pixel of rank r receives the smallest reference
/// level g with CDF_ref(g) >= (r + 1) / |src|. The output CDF therefore
/// equals floor(|src| * CDF_ref(g)) / |src| at every level.
std::vector<std::uint8_t> histogram_match_channel(std::span<const std::uint8_t> src, std::span<const std::uint8_t> ref);

struct PseudoGroundTruth {
  ImageTensor image;
  std::vector<std::string> warnings;
};

/// Per region (lip, skin, eye) and per RGB channel, histogram-matches the
/// pixels of x to those of y1 and recombines them. Background pixels and
/// regions empty in either image are copied from x unchanged.
PseudoGroundTruth build_pseudo_gt(const FaceAsset& x, const FaceAsset& y1);

}  // namespace psgan::losses
