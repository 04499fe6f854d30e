#include "psgan/inference.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace psgan::infer {

namespace fs = std::filesystem;
using ag::Tensor;
using json = nlohmann::json;

namespace {

template <typename Scalar>
FeaturesT<Scalar> to_features(const Tensor<Scalar>& t) {
  const ag::Shape s = t.shape();
  FeaturesT<Scalar> f(s.c, s.h, s.w);
  f.data = t.value();
  return f;
}

template <typename Scalar>
Tensor<Scalar> to_tensor(const FeaturesT<Scalar>& f) {
  return Tensor<Scalar>::constant(ag::Shape{1, f.channels, f.height, f.width}, f.data);
}

template <typename Scalar>
amm::ParamMap<Scalar> to_param(const Tensor<Scalar>& t) {
  amm::ParamMap<Scalar> p(t.shape().h, t.shape().w, Scalar(0));
  p.data = t.value();
  return p;
}

template <typename Scalar>
Tensor<Scalar> image_tensor(const BundleT<Scalar>& b, const FaceAsset& a) {
  if (a.image.height != b.arch.input_size || a.image.width != b.arch.input_size)
    throw nn::ShapeError(a.id + ": image size " + std::to_string(a.image.width) + " does not match model input size " +
                         std::to_string(b.arch.input_size));
  return nn::to_tensor<Scalar>(a.image);
}

void require_metadata(const FaceAsset& a) {
  if (a.parsing.size() == 0) throw AssetError(a.id, "missing parsing map");
  validate_asset(a);
}

template <typename Scalar>
amm::FaceGeometryCache<Scalar> geometry(const BundleT<Scalar>& b, const FaceAsset& a) {
  require_metadata(a);
  return amm::face_geometry<Scalar>(a.parsing, a.landmarks, b.arch.factor());
}

}  // namespace

std::vector<Region> all_regions() { return {std::begin(kFaceRegions), std::end(kFaceRegions)}; }

std::vector<Region> parse_regions(const std::vector<std::string>& names) {
  std::vector<Region> out;
  for (const auto& n : names) {
    if (n == "all") return all_regions();
    const Region r = parse_region(n);
    if (r == Region::Background) throw std::invalid_argument("region 'background' cannot be selected");
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  }
  return out;
}

template <typename Scalar>
FeaturesT<Scalar> encode(const BundleT<Scalar>& b, const FaceAsset& x) {
  ag::NoGradGuard guard;
  return to_features(nn::stnet_encode(b, image_tensor(b, x)));
}

template <typename Scalar>
ImageTensor decode(const BundleT<Scalar>& b, const FeaturesT<Scalar>& v) {
  ag::NoGradGuard guard;
  return nn::to_image(nn::stnet_decode(b, to_tensor(v)));
}

amm::AttentionMatrix<float> attention_matrix(const Bundle& b, const FaceAsset& x, const FaceAsset& y, float w) {
  ag::NoGradGuard guard;
  const auto gx = geometry(b, x), gy = geometry(b, y);
  const Features vx = encode(b, x);
  const Features vy = to_features(nn::mdnet_forward(b, image_tensor(b, y)).features);
  return amm::attentive_matrix<float>(vx.pixel_rows(), vy.pixel_rows(), gx.p_hat, gy.p_hat, gx.labels, gy.labels, w);
}

template <typename Scalar>
StyleT<Scalar> reference_style(const BundleT<Scalar>& b, const FaceAsset& x, const FaceAsset& y, double w) {
  ag::NoGradGuard guard;
  const auto gx = geometry(b, x), gy = geometry(b, y);
  const FeaturesT<Scalar> vx = encode(b, x);
  const auto ref = nn::mdnet_forward(b, image_tensor(b, y));
  const FeaturesT<Scalar> vy = to_features(ref.features);
  const auto a = amm::attentive_matrix<Scalar>(vx.pixel_rows(), vy.pixel_rows(), gx.p_hat, gy.p_hat, gx.labels,
                                               gy.labels, Scalar(w));
  const auto [g, be] = amm::morph_params(a, to_param(ref.gamma), to_param(ref.beta), gx.height, gx.width);
  return amm::expand_to_tensors(g, be, vx.channels);
}

template <typename Scalar>
StyleT<Scalar> identity_style(const BundleT<Scalar>& b, const FaceAsset& y_r) {
  ag::NoGradGuard guard;
  const auto id = nn::idnet_forward(b, image_tensor(b, y_r));
  return amm::expand_to_tensors(to_param(id.gamma), to_param(id.beta), b.arch.channels_at_split());
}

std::pair<amm::PixelMask, amm::PixelMask> region_masks(const nn::ArchSpec& arch, const FaceAsset& x,
                                                       const std::vector<Region>& regions) {
  require_metadata(x);
  const ParsingMap small = downscale_parsing(x.parsing, arch.factor());
  amm::PixelMask in = amm::PixelMask::Zero(small.size()), out = amm::PixelMask::Zero(small.size());
  for (Eigen::Index i = 0; i < small.size(); ++i) {
    const Region r = Region(small.data()[i]);
    const bool hit = std::find(regions.begin(), regions.end(), r) != regions.end();
    (hit ? in : out)(i) = 1;
  }
  return {in, out};
}

template <typename Scalar>
StyleT<Scalar> composed_style(const BundleT<Scalar>& b, const StyleRequest& req, double w) {
  if (!req.source || !req.y1) throw std::invalid_argument("style request needs a source and a reference");
  for (Region r : req.regions)
    if (r == Region::Background) throw std::invalid_argument("region 'background' cannot be selected");
  const StyleT<Scalar> s1 = reference_style(b, *req.source, *req.y1, w);
  const StyleT<Scalar> s2 = reference_style(b, *req.source, req.y2 ? *req.y2 : *req.source, w);
  const StyleT<Scalar> mixed = amm::compose_interpolated(Scalar(req.alpha), s1, s2);
  const auto [in, out] = region_masks(b.arch, *req.source, req.regions);
  if ((in == 0).all()) return s2;
  if ((out == 0).all()) return mixed;
  return amm::compose_partial<Scalar>({in, out}, {mixed, s2});
}

template <typename Scalar>
FeaturesT<Scalar> modulated_features(const BundleT<Scalar>& b, const StyleRequest& req, double w) {
  return amm::apply_style(encode(b, *req.source), composed_style(b, req, w));
}

template <typename Scalar>
ImageTensor run(const BundleT<Scalar>& b, const StyleRequest& req, double w) {
  return decode(b, modulated_features(b, req, w));
}

template <typename Scalar>
ImageTensor transfer(const FaceAsset& x, const FaceAsset& y1, const BundleT<Scalar>& b, double w) {
  return decode(b, amm::apply_style(encode(b, x), reference_style(b, x, y1, w)));
}

template <typename Scalar>
FeaturesT<Scalar> removal_features(const BundleT<Scalar>& b, const FaceAsset& y_r) {
  return amm::apply_style(encode(b, y_r), identity_style(b, y_r));
}

template <typename Scalar>
ImageTensor remove(const FaceAsset& y_r, const BundleT<Scalar>& b) {
  validate_image(y_r.image, y_r.id);
  return decode(b, removal_features(b, y_r));
}

template <typename Scalar>
ImageTensor transfer_partial(const FaceAsset& x, const FaceAsset& y1, const FaceAsset& y2,
                             const std::vector<Region>& regions_from_y1, const BundleT<Scalar>& b, double w) {
  StyleRequest req;
  req.source = &x;
  req.y1 = &y1;
  req.y2 = &y2;
  req.regions = regions_from_y1;
  return run(b, req, w);
}

template <typename Scalar>
ImageTensor transfer_degree(const FaceAsset& x, const FaceAsset& y1, float alpha, const BundleT<Scalar>& b,
                            const FaceAsset* y2, double w) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw std::invalid_argument("alpha must lie in [0, 1]");
  StyleRequest req;
  req.source = &x;
  req.y1 = &y1;
  req.y2 = y2;
  req.alpha = alpha;
  return run(b, req, w);
}

#define PSGAN_INFER_INSTANTIATE(S)                                                                                  \
  template FeaturesT<S> encode(const BundleT<S>&, const FaceAsset&);                                               \
  template ImageTensor decode(const BundleT<S>&, const FeaturesT<S>&);                                             \
  template StyleT<S> reference_style(const BundleT<S>&, const FaceAsset&, const FaceAsset&, double);               \
  template StyleT<S> identity_style(const BundleT<S>&, const FaceAsset&);                                          \
  template StyleT<S> composed_style(const BundleT<S>&, const StyleRequest&, double);                               \
  template FeaturesT<S> modulated_features(const BundleT<S>&, const StyleRequest&, double);                        \
  template ImageTensor run(const BundleT<S>&, const StyleRequest&, double);                                        \
  template ImageTensor transfer(const FaceAsset&, const FaceAsset&, const BundleT<S>&, double);                    \
  template FeaturesT<S> removal_features(const BundleT<S>&, const FaceAsset&);                                     \
  template ImageTensor remove(const FaceAsset&, const BundleT<S>&);                                                \
  template ImageTensor transfer_partial(const FaceAsset&, const FaceAsset&, const FaceAsset&,                      \
                                        const std::vector<Region>&, const BundleT<S>&, double);                    \
  template ImageTensor transfer_degree(const FaceAsset&, const FaceAsset&, float, const BundleT<S>&,               \
                                       const FaceAsset*, double);

PSGAN_INFER_INSTANTIATE(float)
PSGAN_INFER_INSTANTIATE(double)
#undef PSGAN_INFER_INSTANTIATE

void validate_spec(const TransferSpec& spec) {
  if (spec.remove) {
    if (!spec.references.empty()) throw RequestError("reference_ids", "remove mode takes no references");
    if (spec.alpha) throw RequestError("alpha", "remove mode takes no alpha");
    if (spec.regions) throw RequestError("regions", "remove mode takes no regions");
    return;
  }
  if (spec.references.empty() || spec.references.size() > 2)
    throw RequestError("reference_ids", "transfer needs one or two references");
  if (spec.alpha && !(*spec.alpha >= 0.0f && *spec.alpha <= 1.0f))
    throw RequestError("alpha", "alpha must lie in [0, 1]");
  if (spec.references.size() == 2 && !spec.alpha && !spec.regions)
    throw RequestError("reference_ids", "two references need alpha or regions to say how they combine");
  if (spec.regions)
    for (Region r : *spec.regions)
      if (r == Region::Background) throw RequestError("regions", "region 'background' cannot be selected");
}

ImageTensor execute(const Bundle& b, const FaceAsset& source, const TransferSpec& spec, float w) {
  validate_spec(spec);
  if (spec.remove) return remove(source, b);
  StyleRequest req;
  req.source = &source;
  req.y1 = spec.references[0];
  req.y2 = spec.references.size() == 2 ? spec.references[1] : nullptr;
  req.alpha = spec.alpha.value_or(1.0f);
  if (spec.regions) req.regions = *spec.regions;
  const bool plain = !req.y2 && req.alpha == 1.0f && req.regions.size() == std::size(kFaceRegions);
  return plain ? transfer(source, *req.y1, b, w) : run(b, req, w);
}

AttentionRow attention_row(const amm::AttentionMatrix<float>& a, int source_pixel, int ref_height, int ref_width) {
  if (source_pixel < 0 || source_pixel >= a.weights.rows())
    throw std::out_of_range("attention row " + std::to_string(source_pixel) + " outside the source grid");
  if (Eigen::Index(ref_height) * ref_width != a.weights.cols())
    throw std::invalid_argument("attention_row: reference grid size mismatch");
  AttentionRow r;
  r.height = ref_height;
  r.width = ref_width;
  r.valid = a.valid[std::size_t(source_pixel)] != 0;
  r.scores = a.scores.row(source_pixel).transpose().array();
  r.weights = a.weights.row(source_pixel).transpose().array();
  return r;
}

ImageTensor heatmap(const Eigen::ArrayXf& values, int height, int width, int scale) {
  if (values.size() != Eigen::Index(height) * width || scale < 1) throw std::invalid_argument("heatmap: bad shape");
  const float lo = values.minCoeff(), hi = values.maxCoeff();
  const float span = hi > lo ? hi - lo : 1.0f;
  ImageTensor img(height * scale, width * scale);
  const Eigen::Index plane = img.plane();
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float v = (values(Eigen::Index(y / scale) * width + x / scale) - lo) / span * 2.0f - 1.0f;
      for (int c = 0; c < 3; ++c) img.data(c * plane + Eigen::Index(y) * img.width + x) = v;
    }
  return img;
}

// ---------------------------------------------------------------------------
// Video

void blend_background(ImageTensor& img, const FaceAsset& source) {
  if (img.height != source.image.height || img.width != source.image.width)
    throw std::invalid_argument("blend_background: size mismatch");
  const Eigen::Index plane = img.plane();
  for (Eigen::Index i = 0; i < plane; ++i)
    if (source.parsing.data()[i] == std::uint8_t(Region::Background))
      for (int c = 0; c < 3; ++c) img.data(c * plane + i) = source.image.data(c * plane + i);
}

std::vector<FrameResult> video_transfer(const std::vector<Frame>& frames, const FaceAsset& y1, const Bundle& b,
                                        bool blend, float w) {
  std::vector<FrameResult> out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    FrameResult r;
    r.index = i;
    r.id = frames[i].id;
    if (!frames[i].asset) {
      r.warning = "frame " + std::to_string(i) + " (" + frames[i].id + ") skipped: " +
                  (frames[i].problem.empty() ? "missing metadata" : frames[i].problem);
      out.push_back(std::move(r));
      continue;
    }
    const FaceAsset& f = *frames[i].asset;
    ImageTensor img = transfer(f, y1, b, w);
    if (blend) blend_background(img, f);
    r.image = std::move(img);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Frame> read_frames(const fs::path& dir) {
  const fs::path path = dir / "frames.jsonl";
  std::ifstream in(path);
  if (!in) throw AssetError({}, "missing frame list " + path.string());
  std::vector<Frame> frames;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw AssetError({}, "frame list line " + std::to_string(line_no) + ": " + e.what());
    }
    Frame f;
    f.id = j.value("id", "frame_" + std::to_string(frames.size()));
    if (!j.contains("image_path")) throw AssetError(f.id, "frame has no image_path");
    ManifestRecord rec;
    rec.id = f.id;
    rec.image_path = dir / j["image_path"].get<std::string>();
    const bool has_meta = j.contains("parsing_path") && j.contains("landmarks_path") &&
                          !j["parsing_path"].is_null() && !j["landmarks_path"].is_null();
    if (!has_meta) {
      // Still decode the image so unreadable frames fail loudly.
      read_image_png(rec.image_path);
      f.problem = "missing parsing or landmarks";
      frames.push_back(std::move(f));
      continue;
    }
    rec.parsing_path = dir / j["parsing_path"].get<std::string>();
    rec.landmarks_path = dir / j["landmarks_path"].get<std::string>();
    try {
      f.asset = load_asset(rec);
    } catch (const AssetError& e) {
      f.problem = e.what();
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace psgan::infer
