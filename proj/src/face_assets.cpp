#include "psgan/face_assets.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace psgan {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* region_name(Region r) {
  switch (r) {
    case Region::Background: return "background";
    case Region::Lip: return "lip";
    case Region::Skin: return "skin";
    case Region::Eye: return "eye";
  }
  return "?";
}

Region parse_region(const std::string& name) {
  if (name == "lip") return Region::Lip;
  if (name == "skin") return Region::Skin;
  if (name == "eye") return Region::Eye;
  throw std::invalid_argument("unknown region '" + name + "' (expected lip, skin or eye)");
}

const char* domain_name(Domain d) { return d == Domain::Makeup ? "makeup" : "non-makeup"; }

Domain parse_domain(const std::string& name) {
  if (name == "makeup") return Domain::Makeup;
  if (name == "non-makeup") return Domain::NonMakeup;
  throw std::invalid_argument("unknown domain '" + name + "'");
}

std::vector<const ManifestRecord*> Manifest::domain(Domain d) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records)
    if (r.domain == d) out.push_back(&r);
  return out;
}

bool Manifest::has_dense() const {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const ManifestRecord& r) { return r.dense_path.has_value(); });
}

std::uint8_t to_u8(float v) {
  const double level = std::round((double(v) + 1.0) * 127.5);
  return std::uint8_t(std::clamp(level, 0.0, 255.0));
}

ImageTensor image_from_rgb8(const std::vector<std::uint8_t>& rgb, int height, int width) {
  ImageTensor img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = from_u8(rgb[(std::size_t(y) * width + x) * 3 + c]);
  return img;
}

std::vector<std::uint8_t> image_to_rgb8(const ImageTensor& img) {
  std::vector<std::uint8_t> rgb(std::size_t(img.plane()) * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) rgb[(std::size_t(y) * img.width + x) * 3 + c] = to_u8(img.at(c, y, x));
  return rgb;
}

// --- validation ---------------------------------------------------------------

bool is_supported_size(int size) { return size == 64 || size == 256 || size == 512; }

void validate_image(const ImageTensor& img, const std::string& record) {
  if (img.height != img.width || !is_supported_size(img.height))
    throw AssetError(record, "image must be square 64, 256 or 512 px, got " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height));
  if (img.data.size() != 3 * img.plane()) throw AssetError(record, "image buffer size mismatch");
  if (!img.data.allFinite()) throw AssetError(record, "image contains non-finite values");
  if ((img.data.abs() > 1.0f).any()) throw AssetError(record, "image values outside [-1, 1]");
}

void validate_parsing(const ParsingMap& parsing, int height, int width, const std::string& record) {
  if (parsing.rows() != height || parsing.cols() != width)
    throw AssetError(record, "parsing map shape does not match image");
  if ((parsing.array() > std::uint8_t(3)).any()) throw AssetError(record, "parsing label outside {0,1,2,3}");
}

void validate_landmarks(const Landmarks& lm, int height, int width, const std::string& record) {
  for (int k = 0; k < kLandmarkCount; ++k) {
    const float x = lm(k, 0), y = lm(k, 1);
    if (!(x >= 0 && x < width && y >= 0 && y < height))
      throw AssetError(record, "landmark " + std::to_string(k) + " outside image bounds");
  }
}

void validate_asset(const FaceAsset& asset) {
  validate_image(asset.image, asset.id);
  validate_parsing(asset.parsing, asset.image.height, asset.image.width, asset.id);
  validate_landmarks(asset.landmarks, asset.image.height, asset.image.width, asset.id);
  if (asset.dense) {
    const auto& d = *asset.dense;
    if (d.rows() == 0) throw AssetError(asset.id, "dense correspondence is empty");
    for (Eigen::Index k = 0; k < d.rows(); ++k)
      if (!(d(k, 0) >= 0 && d(k, 0) <= asset.image.width - 1 && d(k, 1) >= 0 && d(k, 1) <= asset.image.height - 1))
        throw AssetError(asset.id, "dense point " + std::to_string(k) + " outside image bounds");
  }
}

// --- PNG ------------------------------------------------------------------------

namespace {

std::string read_file(const fs::path& path, const std::string& record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AssetError(record, "missing file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

struct MemoryReader {
  const std::string* bytes;
  std::size_t offset = 0;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
  auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (reader->offset + length > reader->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, reader->bytes->data() + reader->offset, length);
  reader->offset += length;
}

}  // namespace

ImageTensor decode_image_png(const std::string& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw AssetError({}, std::string("cannot decode PNG: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw AssetError({}, std::string("cannot decode PNG: ") + image.message);
  }
  return image_from_rgb8(rgb, int(image.height), int(image.width));
}

ImageTensor read_image_png(const fs::path& path) { return decode_image_png(read_file(path, {})); }

std::string encode_image_png(const ImageTensor& img) {
  std::vector<std::uint8_t> rgb = image_to_rgb8(img);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.width);
  image.height = png_uint_32(img.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr))
    throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr))
    throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
  out.resize(size);
  return out;
}

void write_image_png(const ImageTensor& img, const fs::path& path) { write_file(path, encode_image_png(img)); }

ParsingMap decode_parsing_png(const std::string& bytes) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw std::runtime_error("libpng initialisation failed");
  MemoryReader reader{&bytes};
  ParsingMap labels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw AssetError({}, "cannot decode parsing PNG");
  }
  png_set_read_fn(png, &reader, read_from_memory);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw AssetError({}, "parsing PNG must be single-channel (indexed or grayscale)");
  }
  png_set_packing(png);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  png_read_update_info(png, info);
  const int h = int(png_get_image_height(png, info));
  const int w = int(png_get_image_width(png, info));
  labels.resize(h, w);
  rows.resize(std::size_t(h));
  for (int y = 0; y < h; ++y) rows[std::size_t(y)] = labels.data() + std::ptrdiff_t(y) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return labels;
}

ParsingMap read_parsing_png(const fs::path& path) { return decode_parsing_png(read_file(path, {})); }

void write_parsing_png(const ParsingMap& parsing, const fs::path& path) {
  // Palette: background black, lip red, skin tan, eye blue.
  const std::uint8_t palette[4 * 3] = {0, 0, 0, 220, 40, 60, 230, 190, 150, 60, 80, 200};
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(parsing.cols());
  image.height = png_uint_32(parsing.rows());
  image.format = PNG_FORMAT_RGB_COLORMAP;
  image.colormap_entries = 4;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, parsing.data(), 0, palette))
    throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, parsing.data(), 0, palette))
    throw std::runtime_error(std::string("PNG encode failed: ") + image.message);
  out.resize(size);
  write_file(path, out);
}

// --- JSON point lists --------------------------------------------------------------

namespace {

Eigen::Matrix<float, Eigen::Dynamic, 2> parse_points(const std::string& text, const std::string& record) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw AssetError(record, std::string("malformed point list: ") + e.what());
  }
  if (!j.is_array()) throw AssetError(record, "point list must be a JSON array");
  Eigen::Matrix<float, Eigen::Dynamic, 2> pts(Eigen::Index(j.size()), 2);
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto& p = j[k];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw AssetError(record, "point " + std::to_string(k) + " is not an [x, y] pair");
    pts(Eigen::Index(k), 0) = p[0].get<float>();
    pts(Eigen::Index(k), 1) = p[1].get<float>();
  }
  return pts;
}

std::string dump_points(const Eigen::Matrix<float, Eigen::Dynamic, 2>& pts) {
  json j = json::array();
  for (Eigen::Index k = 0; k < pts.rows(); ++k) j.push_back({pts(k, 0), pts(k, 1)});
  return j.dump() + "\n";
}

}  // namespace

Landmarks parse_landmarks_json(const std::string& text, const std::string& record) {
  auto pts = parse_points(text, record);
  if (pts.rows() != kLandmarkCount)
    throw AssetError(record, "landmark count must be 68, got " + std::to_string(pts.rows()));
  return pts;
}

Landmarks read_landmarks(const fs::path& path, const std::string& record) {
  return parse_landmarks_json(read_file(path, record), record);
}

void write_landmarks(const Landmarks& lm, const fs::path& path) { write_file(path, dump_points(lm)); }

DenseCorrespondence parse_dense_json(const std::string& text, const std::string& record) {
  auto pts = parse_points(text, record);
  if (pts.rows() == 0) throw AssetError(record, "dense correspondence is empty");
  return pts;
}

DenseCorrespondence read_dense(const fs::path& path, const std::string& record) {
  return parse_dense_json(read_file(path, record), record);
}

void write_dense(const DenseCorrespondence& pts, const fs::path& path) { write_file(path, dump_points(pts)); }

// --- manifest ------------------------------------------------------------------------

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw AssetError({}, "missing manifest " + path.string());
  const fs::path base = path.parent_path();
  Manifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.image_path = base / j.at("image_path").get<std::string>();
      r.parsing_path = base / j.at("parsing_path").get<std::string>();
      r.landmarks_path = base / j.at("landmarks_path").get<std::string>();
      if (j.contains("dense_path") && !j["dense_path"].is_null())
        r.dense_path = base / j["dense_path"].get<std::string>();
      r.domain = parse_domain(j.at("domain").get<std::string>());
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw AssetError({}, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.id);
  std::sort(ids.begin(), ids.end());
  if (auto it = std::adjacent_find(ids.begin(), ids.end()); it != ids.end())
    throw AssetError(*it, "duplicate id in manifest");
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  const fs::path base = path.parent_path();
  std::ostringstream out;
  for (const auto& r : manifest.records) {
    json j;
    j["id"] = r.id;
    j["image_path"] = fs::relative(r.image_path, base).generic_string();
    j["parsing_path"] = fs::relative(r.parsing_path, base).generic_string();
    j["landmarks_path"] = fs::relative(r.landmarks_path, base).generic_string();
    if (r.dense_path) j["dense_path"] = fs::relative(*r.dense_path, base).generic_string();
    j["domain"] = domain_name(r.domain);
    out << j.dump() << "\n";
  }
  write_file(path, out.str());
}

FaceAsset load_asset(const ManifestRecord& record) {
  FaceAsset a;
  a.id = record.id;
  a.domain = record.domain;
  try {
    a.image = decode_image_png(read_file(record.image_path, record.id));
    a.parsing = decode_parsing_png(read_file(record.parsing_path, record.id));
  } catch (const AssetError& e) {
    if (!e.record().empty()) throw;
    throw AssetError(record.id, e.what());
  }
  a.landmarks = read_landmarks(record.landmarks_path, record.id);
  if (record.dense_path) a.dense = read_dense(*record.dense_path, record.id);
  validate_asset(a);
  return a;
}

std::vector<FaceAsset> load_assets(const Manifest& manifest) {
  std::vector<FaceAsset> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back(load_asset(r));
  return out;
}

ManifestRecord save_asset(const FaceAsset& asset, const fs::path& dir) {
  ManifestRecord r;
  r.id = asset.id;
  r.domain = asset.domain;
  r.image_path = dir / (asset.id + ".png");
  r.parsing_path = dir / (asset.id + "_parsing.png");
  r.landmarks_path = dir / (asset.id + "_landmarks.json");
  write_image_png(asset.image, r.image_path);
  write_parsing_png(asset.parsing, r.parsing_path);
  write_landmarks(asset.landmarks, r.landmarks_path);
  if (asset.dense) {
    r.dense_path = dir / (asset.id + "_dense.json");
    write_dense(*asset.dense, *r.dense_path);
  }
  return r;
}

// --- geometry ----------------------------------------------------------------------------

ParsingMap downscale_parsing(const ParsingMap& parsing, int factor) {
  if (factor < 1 || parsing.rows() % factor != 0 || parsing.cols() % factor != 0)
    throw std::invalid_argument("downscale_parsing: factor " + std::to_string(factor) +
                                " does not divide the map size");
  ParsingMap out(parsing.rows() / factor, parsing.cols() / factor);
  for (Eigen::Index y = 0; y < out.rows(); ++y)
    for (Eigen::Index x = 0; x < out.cols(); ++x) out(y, x) = parsing(y * factor, x * factor);
  return out;
}

Landmarks scale_landmarks(const Landmarks& lm, int factor) {
  if (factor < 1) throw std::invalid_argument("scale_landmarks: factor must be >= 1");
  return lm / float(factor);
}

// --- synthetic fixtures ----------------------------------------------------------------------

namespace {

/// Portable uniform draw in [0, 1).
double uniform(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform(rng); }

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = int(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

double ellipse_rho(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy;
}

struct Palette {
  Rgb background, skin, lip, eye_socket, iris;
  bool makeup = false;
  Rgb lipstick, shadow, blush, highlight;
};

FaceGeometry base_geometry(std::mt19937_64& rng, double s) {
  FaceGeometry g;
  g.cx = (32 + uniform(rng, -1.5, 1.5)) * s;
  g.cy = (33 + uniform(rng, -1.5, 1.5)) * s;
  g.rx = (20 + uniform(rng, -1.5, 1.5)) * s;
  g.ry = (25 + uniform(rng, -1.5, 1.5)) * s;
  g.eye_dx = (8.5 + uniform(rng, -0.7, 0.7)) * s;
  g.eye_y = g.cy - (6 + uniform(rng, -0.7, 0.7)) * s;
  g.eye_rx = 5.2 * s;
  g.eye_ry = 3.2 * s;
  g.nose_y = g.cy + (5 + uniform(rng, -0.5, 0.5)) * s;
  g.lip_y = g.cy + (12.5 + uniform(rng, -0.7, 0.7)) * s;
  g.lip_rx = (8 + uniform(rng, -0.8, 0.8)) * s;
  g.lip_ry = 4.2 * s;
  return g;
}

FaceGeometry posed(const FaceGeometry& g, double dx, double dy, double k) {
  FaceGeometry p = g;
  auto my = [&](double y) { return g.cy + dy + (y - g.cy) * k; };
  p.cx = g.cx + dx;
  p.cy = g.cy + dy;
  p.rx = g.rx * k;
  p.ry = g.ry * k;
  p.eye_dx = g.eye_dx * k;
  p.eye_y = my(g.eye_y);
  p.eye_rx = g.eye_rx * k;
  p.eye_ry = g.eye_ry * k;
  p.nose_y = my(g.nose_y);
  p.lip_y = my(g.lip_y);
  p.lip_rx = g.lip_rx * k;
  p.lip_ry = g.lip_ry * k;
  return p;
}

Region label_at(const FaceGeometry& g, double x, double y) {
  if (ellipse_rho(x, y, g.cx - g.eye_dx, g.eye_y, g.eye_rx, g.eye_ry) <= 1.0 ||
      ellipse_rho(x, y, g.cx + g.eye_dx, g.eye_y, g.eye_rx, g.eye_ry) <= 1.0)
    return Region::Eye;
  if (ellipse_rho(x, y, g.cx, g.lip_y, g.lip_rx, g.lip_ry) <= 1.0) return Region::Lip;
  if (ellipse_rho(x, y, g.cx, g.cy, g.rx, g.ry) <= 1.0) return Region::Skin;
  return Region::Background;
}

FaceAsset render(const std::string& id, Domain domain, const FaceGeometry& g, const Palette& pal, int size,
                 std::uint64_t noise_seed) {
  std::mt19937_64 noise(noise_seed);
  FaceAsset a;
  a.id = id;
  a.domain = domain;
  a.image = ImageTensor(size, size);
  a.parsing = ParsingMap::Zero(size, size);
  const double blush_dx = g.rx * 0.55, blush_y = g.cy + g.ry * 0.2;
  const double blush_sigma = g.rx * 0.16;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const Region r = label_at(g, x, y);
      a.parsing(y, x) = std::uint8_t(r);
      Rgb c;
      switch (r) {
        case Region::Background: c = mix(pal.background, {0, 0, 0}, 0.25 * y / size); break;
        case Region::Skin: {
          const double rho = ellipse_rho(x, y, g.cx, g.cy, g.rx, g.ry);
          c = mix(pal.skin, {0, 0, 0}, 0.18 * rho);
          if (pal.makeup) {
            for (double side : {-1.0, 1.0}) {
              const double d2 = std::pow(x - (g.cx + side * blush_dx), 2) + std::pow(y - blush_y, 2);
              c = mix(c, pal.blush, 0.65 * std::exp(-d2 / (2 * blush_sigma * blush_sigma)));
            }
            const double hx = (x - g.cx) / (0.12 * g.rx), hy = (y - 0.5 * (g.eye_y + g.nose_y)) / (0.5 * (g.nose_y - g.eye_y) + 1);
            c = mix(c, pal.highlight, 0.55 * std::exp(-0.5 * (hx * hx + hy * hy)));
          }
          break;
        }
        case Region::Lip: {
          const double rho = ellipse_rho(x, y, g.cx, g.lip_y, g.lip_rx, g.lip_ry);
          c = mix(pal.makeup ? pal.lipstick : pal.lip, {0, 0, 0}, 0.2 * rho);
          break;
        }
        case Region::Eye: {
          const double ex = x < g.cx ? g.cx - g.eye_dx : g.cx + g.eye_dx;
          const double rho = ellipse_rho(x, y, ex, g.eye_y, g.eye_rx, g.eye_ry);
          const Rgb socket = pal.makeup ? pal.shadow : pal.eye_socket;
          c = rho < 0.3 ? pal.iris : mix(socket, pal.skin, 0.3 * rho);
          break;
        }
      }
      const double jitter = uniform(noise, -3.0, 3.0) / 255.0;
      a.image.at(0, y, x) = float(std::clamp(c.r + jitter, 0.0, 1.0) * 2 - 1);
      a.image.at(1, y, x) = float(std::clamp(c.g + jitter, 0.0, 1.0) * 2 - 1);
      a.image.at(2, y, x) = float(std::clamp(c.b + jitter, 0.0, 1.0) * 2 - 1);
    }
  a.landmarks = fixture_landmarks(g);

  // Dense points: 5x5 grids over each cheek and the nose bridge, ordered
  // identically for every face so index k corresponds across images.
  DenseCorrespondence dense(kFixtureDensePoints, 2);
  int k = 0;
  auto grid = [&](double cx, double cy, double hx, double hy) {
    for (int j = 0; j < 5; ++j)
      for (int i = 0; i < 5; ++i) {
        dense(k, 0) = float(cx + hx * (i - 2) / 2.0);
        dense(k, 1) = float(cy + hy * (j - 2) / 2.0);
        ++k;
      }
  };
  grid(g.cx - blush_dx, blush_y, g.rx * 0.15, g.ry * 0.12);
  grid(g.cx + blush_dx, blush_y, g.rx * 0.15, g.ry * 0.12);
  grid(g.cx, 0.5 * (g.eye_y + g.nose_y), g.rx * 0.08, 0.4 * (g.nose_y - g.eye_y));
  a.dense = dense;
  return a;
}

}  // namespace

Landmarks fixture_landmarks(const FaceGeometry& g) {
  Landmarks lm;
  const double pi = std::numbers::pi;
  // 0-16: jaw along the lower half of the skin ellipse.
  for (int k = 0; k <= 16; ++k) {
    const double t = pi - k * pi / 16;
    lm(k, 0) = float(g.cx + g.rx * std::cos(t));
    lm(k, 1) = float(g.cy + g.ry * std::sin(t));
  }
  // 17-26: brows.
  const double brow_y = g.eye_y - g.eye_ry - 0.12 * g.ry;
  for (int k = 0; k < 5; ++k) {
    const double off = (k - 2) * g.eye_rx * 0.45;
    const double lift = -0.04 * g.ry * (2 - std::abs(k - 2));
    lm(17 + k, 0) = float(g.cx - g.eye_dx + off);
    lm(17 + k, 1) = float(brow_y + lift);
    lm(22 + k, 0) = float(g.cx + g.eye_dx + off);
    lm(22 + k, 1) = float(brow_y + lift);
  }
  // 27-30: nose bridge; 31-35: nostril line.
  for (int k = 0; k < 4; ++k) {
    lm(27 + k, 0) = float(g.cx);
    lm(27 + k, 1) = float(g.eye_y + (g.nose_y - g.eye_y) * (k + 0.5) / 4.0);
  }
  for (int k = 0; k < 5; ++k) {
    lm(31 + k, 0) = float(g.cx + (k - 2) * 0.07 * g.rx);
    lm(31 + k, 1) = float(g.nose_y + 0.02 * g.ry * (2 - std::abs(k - 2)));
  }
  // 36-41 / 42-47: eye contours.
  const double eye_angles[6] = {pi, 4 * pi / 3, 5 * pi / 3, 0, pi / 3, 2 * pi / 3};
  for (int k = 0; k < 6; ++k) {
    for (int side = 0; side < 2; ++side) {
      const double ex = side == 0 ? g.cx - g.eye_dx : g.cx + g.eye_dx;
      lm(36 + 6 * side + k, 0) = float(ex + g.eye_rx * std::cos(eye_angles[k]));
      lm(36 + 6 * side + k, 1) = float(g.eye_y + g.eye_ry * std::sin(eye_angles[k]));
    }
  }
  // 48-59: outer lip contour; 60-67: inner lip contour.
  for (int k = 0; k < 12; ++k) {
    const double t = pi + k * 2 * pi / 12;
    lm(48 + k, 0) = float(g.cx + g.lip_rx * std::cos(t));
    lm(48 + k, 1) = float(g.lip_y + g.lip_ry * std::sin(t));
  }
  for (int k = 0; k < 8; ++k) {
    const double t = pi + k * 2 * pi / 8;
    lm(60 + k, 0) = float(g.cx + 0.6 * g.lip_rx * std::cos(t));
    lm(60 + k, 1) = float(g.lip_y + 0.3 * g.lip_ry * std::sin(t));
  }
  return lm;
}

FixturePair synth_fixture(std::uint64_t seed, int size) {
  if (size != 64 && size != 256) throw std::invalid_argument("synth_fixture: size must be 64 or 256");
  const double s = size / 64.0;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  Palette pal;
  pal.background = hsv(uniform(rng), uniform(rng, 0.15, 0.35), uniform(rng, 0.3, 0.5));
  pal.skin = {uniform(rng, 0.78, 0.92), uniform(rng, 0.58, 0.72), uniform(rng, 0.45, 0.6)};
  pal.lip = {uniform(rng, 0.68, 0.76), uniform(rng, 0.44, 0.5), uniform(rng, 0.42, 0.48)};
  pal.eye_socket = mix(pal.skin, {0.3, 0.25, 0.25}, 0.35);
  pal.iris = {0.12, 0.1, 0.1};

  Palette mk = pal;
  mk.makeup = true;
  const double lip_hue = uniform(rng, -0.12, 0.04);
  mk.lipstick = hsv(lip_hue + 1.0, uniform(rng, 0.7, 0.9), uniform(rng, 0.6, 0.85));
  mk.shadow = hsv(uniform(rng), uniform(rng, 0.5, 0.8), uniform(rng, 0.35, 0.65));
  mk.blush = hsv(uniform(rng, 0.93, 1.0), uniform(rng, 0.45, 0.6), uniform(rng, 0.85, 0.95));
  mk.highlight = {0.98, 0.95, 0.9};

  FixturePair pair;
  pair.plain_geometry = base_geometry(rng, s);
  pair.makeup_geometry = posed(pair.plain_geometry, uniform(rng, -2, 2) * s, uniform(rng, -2, 2) * s,
                               uniform(rng, 0.95, 1.05));
  const std::string tag = std::to_string(seed);
  pair.plain = render("plain_" + tag, Domain::NonMakeup, pair.plain_geometry, pal, size, seed * 2 + 1);
  pair.makeup = render("makeup_" + tag, Domain::Makeup, pair.makeup_geometry, mk, size, seed * 2 + 2);
  return pair;
}

}  // namespace psgan
