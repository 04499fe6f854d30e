#pragma once

// Transfer and removal over a loaded float bundle, with region-partial and
// degree-controlled composition of morphed style tensors, and per-frame video
// mode. Every function here is read-only on the bundle and runs with gradient
// tracking disabled for the calling thread.

#include "psgan/amm.hpp"
#include "psgan/networks.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace psgan::infer {

template <typename Scalar>
using BundleT = nn::NetworkBundle<Scalar>;
template <typename Scalar>
using FeaturesT = amm::FeatureGrid<Scalar>;
template <typename Scalar>
using StyleT = amm::StyleTensor<Scalar>;

// The engine runs in float; the style-space functions below are also
// instantiated for double.
using Bundle = BundleT<float>;
using Features = FeaturesT<float>;
using Style = StyleT<float>;

constexpr float kDefaultVisualWeight = float(amm::kDefaultVisualWeight);

/// All three face regions.
std::vector<Region> all_regions();
/// Parses names such as "lip", "skin", "eye"; "all" expands to every region.
std::vector<Region> parse_regions(const std::vector<std::string>& names);

/// V = STNet encoder(x).
template <typename Scalar>
FeaturesT<Scalar> encode(const BundleT<Scalar>& b, const FaceAsset& x);
/// Decodes modulated bottleneck features to an image in [-1, 1].
template <typename Scalar>
ImageTensor decode(const BundleT<Scalar>& b, const FeaturesT<Scalar>& v);

/// Reference makeup morphed onto the source grid and expanded to C channels.
template <typename Scalar>
StyleT<Scalar> reference_style(const BundleT<Scalar>& b, const FaceAsset& x, const FaceAsset& y,
                               double w = kDefaultVisualWeight);
/// IDNet identity matrices of y_r, expanded (no attention).
template <typename Scalar>
StyleT<Scalar> identity_style(const BundleT<Scalar>& b, const FaceAsset& y_r);

/// Source-parsing masks at bottleneck resolution: pixels whose label is in
/// `regions`, and the complement.
std::pair<amm::PixelMask, amm::PixelMask> region_masks(const nn::ArchSpec& arch, const FaceAsset& x,
                                                       const std::vector<Region>& regions);

/// Transfer request over one source. Gamma is
///   mask(regions) * (alpha * G1 + (1 - alpha) * G2) + (1 - mask(regions)) * G2
/// where G1 comes from y1 and G2 from y2, or from the source itself when y2
/// is absent (B likewise). With alpha = 1 and all regions this is plain
/// transfer.
struct StyleRequest {
  const FaceAsset* source = nullptr;
  const FaceAsset* y1 = nullptr;
  const FaceAsset* y2 = nullptr;
  float alpha = 1.0f;
  std::vector<Region> regions = all_regions();
};

template <typename Scalar>
StyleT<Scalar> composed_style(const BundleT<Scalar>& b, const StyleRequest& req, double w = kDefaultVisualWeight);
/// apply_style(encode(source), composed_style(...)).
template <typename Scalar>
FeaturesT<Scalar> modulated_features(const BundleT<Scalar>& b, const StyleRequest& req,
                                     double w = kDefaultVisualWeight);
template <typename Scalar>
ImageTensor run(const BundleT<Scalar>& b, const StyleRequest& req, double w = kDefaultVisualWeight);

template <typename Scalar>
ImageTensor transfer(const FaceAsset& x, const FaceAsset& y1, const BundleT<Scalar>& b,
                     double w = kDefaultVisualWeight);
template <typename Scalar>
ImageTensor remove(const FaceAsset& y_r, const BundleT<Scalar>& b);
/// Regions in `regions_from_y1` take y1's makeup; the rest take y2's.
template <typename Scalar>
ImageTensor transfer_partial(const FaceAsset& x, const FaceAsset& y1, const FaceAsset& y2,
                             const std::vector<Region>& regions_from_y1, const BundleT<Scalar>& b,
                             double w = kDefaultVisualWeight);
/// alpha * y1 + (1 - alpha) * y2 in style space; y2 defaults to x.
template <typename Scalar>
ImageTensor transfer_degree(const FaceAsset& x, const FaceAsset& y1, float alpha, const BundleT<Scalar>& b,
                            const FaceAsset* y2 = nullptr, double w = kDefaultVisualWeight);

/// Removal on features, for feature-level checks.
template <typename Scalar>
FeaturesT<Scalar> removal_features(const BundleT<Scalar>& b, const FaceAsset& y_r);

/// A user-level request as issued by the CLI and the HTTP service.
///  - remove: no references, alpha or regions allowed.
///  - one reference: y2 is the source itself; alpha defaults to 1 and
///    regions to all.
///  - two references: alpha and/or regions must be given.
struct TransferSpec {
  bool remove = false;
  std::vector<const FaceAsset*> references;
  std::optional<float> alpha;
  std::optional<std::vector<Region>> regions;
};

/// Invalid combination of request fields; `field` names the offender.
class RequestError : public std::invalid_argument {
 public:
  RequestError(std::string field, const std::string& what) : std::invalid_argument(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

void validate_spec(const TransferSpec& spec);
ImageTensor execute(const Bundle& b, const FaceAsset& source, const TransferSpec& spec,
                    float w = kDefaultVisualWeight);

/// Attention between one source pixel and the reference grid, for debugging.
struct AttentionRow {
  int height = 0;  // reference grid
  int width = 0;
  bool valid = false;
  Eigen::ArrayXf scores;   // pre-softmax
  Eigen::ArrayXf weights;  // post-softmax (zeros if invalid)
};
amm::AttentionMatrix<float> attention_matrix(const Bundle& b, const FaceAsset& x, const FaceAsset& y,
                                              float w = kDefaultVisualWeight);
AttentionRow attention_row(const amm::AttentionMatrix<float>& a, int source_pixel, int ref_height, int ref_width);
/// Grey heatmap (min-max scaled) upsampled by `scale` for viewing.
ImageTensor heatmap(const Eigen::ArrayXf& values, int height, int width, int scale);

// ---------------------------------------------------------------------------
// Video

struct Frame {
  std::string id;
  std::optional<FaceAsset> asset;  // empty when metadata is missing
  std::string problem;             // why the frame is unusable
};

struct FrameResult {
  std::size_t index = 0;
  std::string id;
  std::optional<ImageTensor> image;  // empty for skipped frames
  std::string warning;
};

/// Per-frame transfer. With `blend_background`, label-0 pixels are copied from
/// the source frame. Frames without metadata are skipped with a warning.
std::vector<FrameResult> video_transfer(const std::vector<Frame>& frames, const FaceAsset& y1, const Bundle& b,
                                        bool blend_background, float w = kDefaultVisualWeight);

/// Copies background (label 0) pixels of `source` into `img`.
void blend_background(ImageTensor& img, const FaceAsset& source);

/// Reads `<dir>/frames.jsonl`: one {"id", "image_path", "parsing_path"?,
/// "landmarks_path"?} object per line, in playback order, paths relative to
/// `dir`. Frames whose metadata is absent or invalid load without an asset.
std::vector<Frame> read_frames(const std::filesystem::path& dir);

}  // namespace psgan::infer
