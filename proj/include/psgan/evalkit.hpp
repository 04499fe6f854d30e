#pragma once

// Desk-scale metrics: landmark cosine similarity, embedding-based identity
// similarity and per-region histogram distances, plus the pairwise report.

#include "psgan/face_assets.hpp"
#include "psgan/inference.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace psgan::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cosine of the flattened 136-vectors, tiny negatives clamped to 0.
double landmark_cos_sim(const Landmarks& a, const Landmarks& b);

/// Image -> embedding adapter.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Eigen::VectorXd embed(const ImageTensor& img) const = 0;
  virtual std::string name() const = 0;
};

/// Per-channel mean of the image: a deterministic 3-vector.
class MeanPoolEmbedder final : public Embedder {
 public:
  Eigen::VectorXd embed(const ImageTensor& img) const override;
  std::string name() const override { return "mean-pool"; }
};

/// "mean-pool" or "none" (returns nullptr); anything else throws EvalError.
std::unique_ptr<Embedder> make_embedder(const std::string& name);

/// Cosine similarity of embeddings; throws EvalError without an embedder or
/// for zero-norm embeddings.
double identity_similarity(const ImageTensor& a, const ImageTensor& b, const Embedder* embedder);

/// Mean over RGB of the Wasserstein-1 distance between the 8-bit histograms
/// of the region's pixels, in units of the [0, 1] intensity range.
double region_hist_distance(const ImageTensor& img_a, const ParsingMap& parsing_a, const ImageTensor& img_b,
                            const ParsingMap& parsing_b, Region region);

/// HSV hue of an 8-bit colour as a fraction of the circle, in [0, 1).
/// Achromatic colours (r = g = b) get hue 0.
double hue_of(int r, int g, int b);

/// Circular Wasserstein-1 distance between the region's hue histograms
/// (360 bins), as a fraction of the hue circle; at most 0.5.
double region_hue_distance(const ImageTensor& img_a, const ParsingMap& parsing_a, const ImageTensor& img_b,
                           const ParsingMap& parsing_b, Region region);

struct PairReport {
  std::string pair_id;
  double cos_sim = 0;
  std::optional<double> identity_sim;
  double lip = 0, skin = 0, eye = 0;
  double lip_hue = 0;

  nlohmann::json to_json() const;
};

/// Landmarks for a transferred image. Without a detector the source's stored
/// landmarks stand in, since the output keeps the source geometry.
using LandmarkDetector = std::function<Landmarks(const ImageTensor&)>;

/// Transfers every non-makeup asset with every makeup asset and scores the
/// output: landmark similarity of source vs transferred, identity similarity
/// of source vs output, and region distances of output vs reference.
std::vector<PairReport> evaluate(const std::vector<FaceAsset>& assets, const infer::Bundle& bundle,
                                 const Embedder* embedder, const LandmarkDetector& detector = {},
                                 float w = infer::kDefaultVisualWeight);

void write_report(const std::vector<PairReport>& rows, std::ostream& out);

}  // namespace psgan::eval
