#pragma once

// Encoder / bottleneck / decoder generators and PatchGAN discriminators.
//
// Shared encoder layout (MDNet, IDNet and the STNet encoder):
//   7x7 conv (3 -> b) + IN + ReLU
//   3x3 stride-2 conv (b -> 2b) + IN + ReLU, 3x3 stride-2 conv (2b -> 4b) + IN + ReLU
//   (512 px input: one more stride-2 conv 4b -> 4b)
//   `amm_split_index` residual blocks
// MDNet and IDNet finish with two 1x1 convs producing the gamma / beta maps.
// The STNet decoder continues with the remaining residual blocks, mirrored
// nearest-neighbour upsampling stages and a 7x7 conv with tanh output.

#include "psgan/autograd.hpp"
#include "psgan/face_assets.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace psgan::nn {

using ag::Shape;
using ag::Tensor;

struct ArchSpec {
  int input_size = 256;
  int base_width = 64;
  int bottleneck_blocks = 6;
  int amm_split_index = 3;
  int disc_width = 64;

  int downsamples() const { return input_size >= 512 ? 3 : 2; }
  int factor() const { return 1 << downsamples(); }
  int bottleneck_size() const { return input_size / factor(); }
  int channels_at_split() const { return 4 * base_width; }

  void validate() const;
  bool operator==(const ArchSpec&) const = default;
};

nlohmann::json arch_to_json(const ArchSpec& a);
ArchSpec arch_from_json(const nlohmann::json& j);

enum class Which { X, Y };

/// Error for shape/metadata mismatches between inputs and an architecture.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
struct Conv {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
  int stride = 1;
  int pad = 0;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
};

template <typename Scalar>
struct ResBlock {
  Conv<Scalar> first;
  Conv<Scalar> second;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    Tensor<Scalar> h = ag::relu(ag::instance_norm(first(x)));
    return ag::add(x, ag::instance_norm(second(h)));
  }
};

template <typename Scalar>
struct Encoder {
  Conv<Scalar> stem;
  std::vector<Conv<Scalar>> downs;
  std::vector<ResBlock<Scalar>> blocks;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    Tensor<Scalar> h = ag::relu(ag::instance_norm(stem(x)));
    for (const auto& d : downs) h = ag::relu(ag::instance_norm(d(h)));
    for (const auto& b : blocks) h = b(h);
    return h;
  }
};

/// Encoder followed by 1x1 heads for the scale (gamma) and shift (beta) maps.
template <typename Scalar>
struct DistillNet {
  Encoder<Scalar> encoder;
  Conv<Scalar> to_gamma;
  Conv<Scalar> to_beta;
};

template <typename Scalar>
struct Decoder {
  std::vector<ResBlock<Scalar>> blocks;
  std::vector<Conv<Scalar>> ups;
  Conv<Scalar> out;

  Tensor<Scalar> operator()(const Tensor<Scalar>& v) const {
    Tensor<Scalar> h = v;
    for (const auto& b : blocks) h = b(h);
    for (const auto& u : ups) h = ag::relu(ag::instance_norm(u(ag::upsample_nearest(h, 2))));
    return ag::tanh(out(h));
  }
};

/// 70x70 PatchGAN: three 4x4 stride-2 convs, then two 4x4 stride-1 convs.
template <typename Scalar>
struct PatchDiscriminator {
  std::vector<Conv<Scalar>> layers;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    Tensor<Scalar> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i](h);
      if (i + 1 == layers.size()) break;
      if (i > 0) h = ag::instance_norm(h);
      h = ag::leaky_relu(h, Scalar(0.2));
    }
    return h;
  }
};

template <typename Scalar>
struct DistillOutput {
  Tensor<Scalar> gamma;     // [N,1,h,w]
  Tensor<Scalar> beta;      // [N,1,h,w]
  Tensor<Scalar> features;  // [N,C,h,w]
};

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

template <typename Scalar>
struct NetworkBundle {
  ArchSpec arch;
  DistillNet<Scalar> mdnet;
  DistillNet<Scalar> idnet;
  Encoder<Scalar> st_encoder;
  Decoder<Scalar> st_decoder;
  PatchDiscriminator<Scalar> d_x;
  PatchDiscriminator<Scalar> d_y;

  static NetworkBundle create(const ArchSpec& arch, std::uint64_t seed);

  /// Every parameter with a stable dotted name, grouped by sub-network prefix
  /// (mdnet, idnet, stnet_enc, stnet_dec, d_x, d_y).
  NamedTensors<Scalar> named_parameters() const;
  std::vector<Tensor<Scalar>> generator_parameters() const;
  std::vector<Tensor<Scalar>> discriminator_parameters() const;

  void check_input(const Tensor<Scalar>& img) const {
    const Shape s = img.shape();
    if (s.c != 3 || s.h != arch.input_size || s.w != arch.input_size)
      throw ShapeError("input " + s.str() + " does not match architecture input size " +
                       std::to_string(arch.input_size));
  }
  void check_features(const Tensor<Scalar>& v) const {
    const Shape s = v.shape();
    if (s.c != arch.channels_at_split() || s.h != arch.bottleneck_size() || s.w != arch.bottleneck_size())
      throw ShapeError("feature grid " + s.str() + " does not match bottleneck shape");
  }
};

// ---------------------------------------------------------------------------
// Construction

namespace detail {

template <typename Scalar>
Conv<Scalar> make_conv(std::mt19937_64& rng, int in, int out, int k, int stride, int pad, Scalar bias_fill = 0,
                       double gain = 1.0) {
  const double stddev = gain * std::sqrt(2.0 / double((in + out) * k * k));
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::Array<Scalar, Eigen::Dynamic, 1> w(Eigen::Index(out) * in * k * k);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = Scalar(dist(rng));
  Conv<Scalar> c;
  c.weight = Tensor<Scalar>::parameter(Shape{out, in, k, k}, std::move(w));
  c.bias = Tensor<Scalar>::parameter(Shape{1, out, 1, 1}, Eigen::Array<Scalar, Eigen::Dynamic, 1>::Constant(out, bias_fill));
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <typename Scalar>
ResBlock<Scalar> make_block(std::mt19937_64& rng, int ch) {
  return {make_conv<Scalar>(rng, ch, ch, 3, 1, 1), make_conv<Scalar>(rng, ch, ch, 3, 1, 1)};
}

template <typename Scalar>
Encoder<Scalar> make_encoder(std::mt19937_64& rng, const ArchSpec& a) {
  Encoder<Scalar> e;
  const int b = a.base_width;
  e.stem = make_conv<Scalar>(rng, 3, b, 7, 1, 3);
  e.downs.push_back(make_conv<Scalar>(rng, b, 2 * b, 3, 2, 1));
  e.downs.push_back(make_conv<Scalar>(rng, 2 * b, 4 * b, 3, 2, 1));
  for (int i = 2; i < a.downsamples(); ++i) e.downs.push_back(make_conv<Scalar>(rng, 4 * b, 4 * b, 3, 2, 1));
  for (int i = 0; i < a.amm_split_index; ++i) e.blocks.push_back(make_block<Scalar>(rng, 4 * b));
  return e;
}

constexpr double kHeadGain = 0.01;

template <typename Scalar>
DistillNet<Scalar> make_distill(std::mt19937_64& rng, const ArchSpec& a) {
  DistillNet<Scalar> d;
  d.encoder = make_encoder<Scalar>(rng, a);
  // Small heads so untrained modulation is close to the identity (gamma ~ 1,
  // beta ~ 0); the bottleneck activations are unnormalised and large.
  d.to_gamma = make_conv<Scalar>(rng, a.channels_at_split(), 1, 1, 1, 0, Scalar(1), kHeadGain);
  d.to_beta = make_conv<Scalar>(rng, a.channels_at_split(), 1, 1, 1, 0, Scalar(0), kHeadGain);
  return d;
}

template <typename Scalar>
Decoder<Scalar> make_decoder(std::mt19937_64& rng, const ArchSpec& a) {
  Decoder<Scalar> d;
  const int b = a.base_width;
  for (int i = a.amm_split_index; i < a.bottleneck_blocks; ++i) d.blocks.push_back(make_block<Scalar>(rng, 4 * b));
  for (int i = 2; i < a.downsamples(); ++i) d.ups.push_back(make_conv<Scalar>(rng, 4 * b, 4 * b, 3, 1, 1));
  d.ups.push_back(make_conv<Scalar>(rng, 4 * b, 2 * b, 3, 1, 1));
  d.ups.push_back(make_conv<Scalar>(rng, 2 * b, b, 3, 1, 1));
  d.out = make_conv<Scalar>(rng, b, 3, 7, 1, 3);
  return d;
}

template <typename Scalar>
PatchDiscriminator<Scalar> make_discriminator(std::mt19937_64& rng, const ArchSpec& a) {
  PatchDiscriminator<Scalar> d;
  const int w = a.disc_width;
  d.layers.push_back(make_conv<Scalar>(rng, 3, w, 4, 2, 1));
  d.layers.push_back(make_conv<Scalar>(rng, w, 2 * w, 4, 2, 1));
  d.layers.push_back(make_conv<Scalar>(rng, 2 * w, 4 * w, 4, 2, 1));
  d.layers.push_back(make_conv<Scalar>(rng, 4 * w, 8 * w, 4, 1, 1));
  d.layers.push_back(make_conv<Scalar>(rng, 8 * w, 1, 4, 1, 1));
  return d;
}

template <typename Scalar>
void name_conv(NamedTensors<Scalar>& out, const std::string& prefix, const Conv<Scalar>& c) {
  out.emplace_back(prefix + ".weight", c.weight);
  out.emplace_back(prefix + ".bias", c.bias);
}

template <typename Scalar>
void name_blocks(NamedTensors<Scalar>& out, const std::string& prefix, const std::vector<ResBlock<Scalar>>& blocks) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    name_conv(out, prefix + ".block" + std::to_string(i) + ".conv0", blocks[i].first);
    name_conv(out, prefix + ".block" + std::to_string(i) + ".conv1", blocks[i].second);
  }
}

template <typename Scalar>
void name_encoder(NamedTensors<Scalar>& out, const std::string& prefix, const Encoder<Scalar>& e) {
  name_conv(out, prefix + ".stem", e.stem);
  for (std::size_t i = 0; i < e.downs.size(); ++i) name_conv(out, prefix + ".down" + std::to_string(i), e.downs[i]);
  name_blocks(out, prefix, e.blocks);
}

}  // namespace detail

template <typename Scalar>
NetworkBundle<Scalar> NetworkBundle<Scalar>::create(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  NetworkBundle b;
  b.arch = arch;
  b.mdnet = detail::make_distill<Scalar>(rng, arch);
  b.idnet = detail::make_distill<Scalar>(rng, arch);
  b.st_encoder = detail::make_encoder<Scalar>(rng, arch);
  b.st_decoder = detail::make_decoder<Scalar>(rng, arch);
  b.d_x = detail::make_discriminator<Scalar>(rng, arch);
  b.d_y = detail::make_discriminator<Scalar>(rng, arch);
  return b;
}

template <typename Scalar>
NamedTensors<Scalar> NetworkBundle<Scalar>::named_parameters() const {
  NamedTensors<Scalar> out;
  detail::name_encoder(out, "mdnet.encoder", mdnet.encoder);
  detail::name_conv(out, "mdnet.to_gamma", mdnet.to_gamma);
  detail::name_conv(out, "mdnet.to_beta", mdnet.to_beta);
  detail::name_encoder(out, "idnet.encoder", idnet.encoder);
  detail::name_conv(out, "idnet.to_gamma", idnet.to_gamma);
  detail::name_conv(out, "idnet.to_beta", idnet.to_beta);
  detail::name_encoder(out, "stnet_enc", st_encoder);
  detail::name_blocks(out, "stnet_dec", st_decoder.blocks);
  for (std::size_t i = 0; i < st_decoder.ups.size(); ++i)
    detail::name_conv(out, "stnet_dec.up" + std::to_string(i), st_decoder.ups[i]);
  detail::name_conv(out, "stnet_dec.out", st_decoder.out);
  for (std::size_t i = 0; i < d_x.layers.size(); ++i) detail::name_conv(out, "d_x.conv" + std::to_string(i), d_x.layers[i]);
  for (std::size_t i = 0; i < d_y.layers.size(); ++i) detail::name_conv(out, "d_y.conv" + std::to_string(i), d_y.layers[i]);
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> NetworkBundle<Scalar>::generator_parameters() const {
  std::vector<Tensor<Scalar>> out;
  for (auto& [name, t] : named_parameters())
    if (!name.starts_with("d_")) out.push_back(t);
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> NetworkBundle<Scalar>::discriminator_parameters() const {
  std::vector<Tensor<Scalar>> out;
  for (auto& [name, t] : named_parameters())
    if (name.starts_with("d_")) out.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes

template <typename Scalar>
DistillOutput<Scalar> mdnet_forward(const NetworkBundle<Scalar>& b, const Tensor<Scalar>& y1) {
  b.check_input(y1);
  Tensor<Scalar> v = b.mdnet.encoder(y1);
  return {b.mdnet.to_gamma(v), b.mdnet.to_beta(v), v};
}

/// Returns gamma / beta of the identity matrices; `features` is left empty.
template <typename Scalar>
DistillOutput<Scalar> idnet_forward(const NetworkBundle<Scalar>& b, const Tensor<Scalar>& yr) {
  b.check_input(yr);
  Tensor<Scalar> v = b.idnet.encoder(yr);
  return {b.idnet.to_gamma(v), b.idnet.to_beta(v), {}};
}

template <typename Scalar>
Tensor<Scalar> stnet_encode(const NetworkBundle<Scalar>& b, const Tensor<Scalar>& x) {
  b.check_input(x);
  return b.st_encoder(x);
}

template <typename Scalar>
Tensor<Scalar> stnet_decode(const NetworkBundle<Scalar>& b, const Tensor<Scalar>& v) {
  b.check_features(v);
  return b.st_decoder(v);
}

template <typename Scalar>
Tensor<Scalar> discriminator_forward(const NetworkBundle<Scalar>& b, const Tensor<Scalar>& img, Which which) {
  b.check_input(img);
  return which == Which::X ? b.d_x(img) : b.d_y(img);
}

// ---------------------------------------------------------------------------
// Image <-> tensor

template <typename Scalar>
Tensor<Scalar> to_tensor(const ImageTensor& img) {
  return Tensor<Scalar>::constant(Shape{1, 3, img.height, img.width}, img.data.template cast<Scalar>());
}

template <typename Scalar>
ImageTensor to_image(const Tensor<Scalar>& t) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("to_image: expected [1,3,H,W], got " + s.str());
  ImageTensor img(s.h, s.w);
  img.data = t.value().template cast<float>();
  return img;
}

// ---------------------------------------------------------------------------
// Checkpoints (float bundles)

/// Extra state stored alongside the parameters (optimizer moments, RNG, ...).
struct CheckpointExtras {
  nlohmann::json train_state;
  std::vector<std::pair<std::string, Eigen::ArrayXf>> tensors;
};

/// Archive layout: 8-byte magic "PSGANPP1", little-endian u64 header length,
/// JSON header {metadata, tensors:[{name, shape, offset, count}], train_state},
/// then raw little-endian float32 tensor data.
void save_checkpoint(const NetworkBundle<float>& bundle, const std::filesystem::path& path,
                     const CheckpointExtras* extras = nullptr);

/// Loads a bundle; if `expected` is given its metadata must match exactly.
NetworkBundle<float> load_checkpoint(const std::filesystem::path& path, const ArchSpec* expected = nullptr,
                                     CheckpointExtras* extras = nullptr);

/// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

extern template struct NetworkBundle<float>;
extern template struct NetworkBundle<double>;

}  // namespace psgan::nn
