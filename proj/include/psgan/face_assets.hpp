#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace psgan {

constexpr int kLandmarkCount = 68;

/// Region labels carried by a parsing map.
enum class Region : std::uint8_t { Background = 0, Lip = 1, Skin = 2, Eye = 3 };

inline constexpr Region kFaceRegions[] = {Region::Lip, Region::Skin, Region::Eye};

const char* region_name(Region r);
Region parse_region(const std::string& name);

enum class Domain { Makeup, NonMakeup };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& name);

/// Thrown for malformed assets and manifests. `record` names the offending
/// manifest record when known.
class AssetError : public std::runtime_error {
 public:
  AssetError(std::string record, const std::string& what)
      : std::runtime_error(record.empty() ? what : record + ": " + what), record_(std::move(record)) {}
  const std::string& record() const { return record_; }

 private:
  std::string record_;
};

/// 3xHxW RGB image with values in [-1, 1], stored planar (NCHW with N = 1).
struct ImageTensor {
  int height = 0;
  int width = 0;
  Eigen::ArrayXf data;

  ImageTensor() = default;
  ImageTensor(int h, int w) : height(h), width(w), data(Eigen::ArrayXf::Zero(3 * Eigen::Index(h) * w)) {}

  Eigen::Index plane() const { return Eigen::Index(height) * width; }
  float& at(int c, int y, int x) { return data(c * plane() + Eigen::Index(y) * width + x); }
  float at(int c, int y, int x) const { return data(c * plane() + Eigen::Index(y) * width + x); }
};

/// Row-major HxW region labels.
using ParsingMap = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 68 (x, y) pixel coordinates; column 0 horizontal, column 1 vertical.
using Landmarks = Eigen::Matrix<float, kLandmarkCount, 2>;

/// K (x, y) points; index k refers to the same facial location across a pair.
using DenseCorrespondence = Eigen::Matrix<float, Eigen::Dynamic, 2>;

struct FaceAsset {
  std::string id;
  ImageTensor image;
  ParsingMap parsing;
  Landmarks landmarks;
  std::optional<DenseCorrespondence> dense;
  Domain domain = Domain::NonMakeup;
};

struct ManifestRecord {
  std::string id;
  std::filesystem::path image_path;
  std::filesystem::path parsing_path;
  std::filesystem::path landmarks_path;
  std::optional<std::filesystem::path> dense_path;
  Domain domain = Domain::NonMakeup;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> domain(Domain d) const;
  bool has_dense() const;
};

// --- 8-bit conversion --------------------------------------------------------

/// Maps an 8-bit level to [-1, 1].
inline float from_u8(double v) { return float(v / 127.5 - 1.0); }
/// Maps [-1, 1] to the nearest 8-bit level, clamping out-of-range values.
std::uint8_t to_u8(float v);

/// Interleaved RGB bytes <-> ImageTensor.
ImageTensor image_from_rgb8(const std::vector<std::uint8_t>& rgb, int height, int width);
std::vector<std::uint8_t> image_to_rgb8(const ImageTensor& img);

// --- Validation ----------------------------------------------------------------

/// Allowed square working resolutions.
bool is_supported_size(int size);

void validate_image(const ImageTensor& img, const std::string& record = {});
void validate_parsing(const ParsingMap& parsing, int height, int width, const std::string& record = {});
void validate_landmarks(const Landmarks& lm, int height, int width, const std::string& record = {});
void validate_asset(const FaceAsset& asset);

// --- File formats --------------------------------------------------------------

ImageTensor read_image_png(const std::filesystem::path& path);
ImageTensor decode_image_png(const std::string& bytes);
void write_image_png(const ImageTensor& img, const std::filesystem::path& path);
std::string encode_image_png(const ImageTensor& img);

ParsingMap read_parsing_png(const std::filesystem::path& path);
ParsingMap decode_parsing_png(const std::string& bytes);
void write_parsing_png(const ParsingMap& parsing, const std::filesystem::path& path);

/// Landmark files are JSON arrays of [x, y] pairs. Throws AssetError
/// ("landmark count") unless exactly 68 points are present.
Landmarks parse_landmarks_json(const std::string& text, const std::string& record = {});
Landmarks read_landmarks(const std::filesystem::path& path, const std::string& record = {});
void write_landmarks(const Landmarks& lm, const std::filesystem::path& path);

DenseCorrespondence parse_dense_json(const std::string& text, const std::string& record = {});
DenseCorrespondence read_dense(const std::filesystem::path& path, const std::string& record = {});
void write_dense(const DenseCorrespondence& pts, const std::filesystem::path& path);

/// JSON-lines manifest; relative paths resolve against the manifest directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

FaceAsset load_asset(const ManifestRecord& record);
std::vector<FaceAsset> load_assets(const Manifest& manifest);

/// Writes `<id>.png`, `<id>_parsing.png`, `<id>_landmarks.json` (and
/// `<id>_dense.json`) under `dir` and returns a record pointing at them.
ManifestRecord save_asset(const FaceAsset& asset, const std::filesystem::path& dir);

// --- Geometry helpers ------------------------------------------------------------

/// Nearest-neighbour subsampling: output(y, x) = parsing(y * factor, x * factor).
ParsingMap downscale_parsing(const ParsingMap& parsing, int factor);

/// Divides every coordinate by `factor`.
Landmarks scale_landmarks(const Landmarks& lm, int factor);

// --- Synthetic fixtures -----------------------------------------------------------

/// Procedural face geometry shared by a fixture pair.
struct FaceGeometry {
  double cx, cy;          // face centre
  double rx, ry;          // skin ellipse radii
  double eye_dx, eye_y;   // eye centre offset from cx, eye row
  double eye_rx, eye_ry;
  double lip_y, lip_rx, lip_ry;
  double nose_y;
};

struct FixturePair {
  FaceAsset plain;
  FaceAsset makeup;
  FaceGeometry plain_geometry;
  FaceGeometry makeup_geometry;
};

/// Number of dense correspondence points emitted per synthetic face.
constexpr int kFixtureDensePoints = 75;

/// Deterministic procedural face pair at `size` (64 or 256). The makeup
/// variant has a slightly shifted pose and seed-derived lip, eye-shadow,
/// blush and nose-highlight colours.
FixturePair synth_fixture(std::uint64_t seed, int size);

/// Landmark k of the parametric layout for a given geometry.
Landmarks fixture_landmarks(const FaceGeometry& g);

}  // namespace psgan
