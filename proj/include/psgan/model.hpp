#pragma once

// Differentiable transfer T(x, y1) and removal R(y_r) built from the bundle's
// sub-networks and the attention morphing op.

#include "psgan/amm.hpp"
#include "psgan/networks.hpp"

namespace psgan {

template <typename Scalar>
struct PreparedFace {
  ag::Tensor<Scalar> image;
  amm::FaceGeometryCache<Scalar> geometry;
};

template <typename Scalar>
PreparedFace<Scalar> prepare_face(const FaceAsset& asset, const nn::ArchSpec& arch) {
  if (asset.image.height != arch.input_size || asset.image.width != arch.input_size)
    throw nn::ShapeError(asset.id + ": image size " + std::to_string(asset.image.width) +
                         " does not match model input size " + std::to_string(arch.input_size));
  return {nn::to_tensor<Scalar>(asset.image), amm::face_geometry<Scalar>(asset.parsing, asset.landmarks, arch.factor())};
}

template <typename Scalar>
struct MorphedMakeup {
  ag::Tensor<Scalar> gamma;  // [1,1,h,w] on the source grid
  ag::Tensor<Scalar> beta;
};

/// Distils the reference's makeup matrices and morphs them onto the source
/// grid through attention between the two faces' bottleneck features.
template <typename Scalar>
MorphedMakeup<Scalar> morph_makeup(const nn::NetworkBundle<Scalar>& b, const ag::Tensor<Scalar>& source_features,
                                   const amm::FaceGeometryCache<Scalar>& source_geometry,
                                   const ag::Tensor<Scalar>& reference, const amm::FaceGeometryCache<Scalar>& reference_geometry,
                                   Scalar visual_weight) {
  auto ref = nn::mdnet_forward(b, reference);
  std::shared_ptr<std::vector<std::uint8_t>> valid;
  auto a = amm::attention(source_features, ref.features, source_geometry, reference_geometry, visual_weight, valid);
  const int h = source_geometry.height, w = source_geometry.width;
  return {amm::morph(a, valid, ref.gamma, h, w, Scalar(1)), amm::morph(a, valid, ref.beta, h, w, Scalar(0))};
}

/// V~ = expand(gamma) * V + expand(beta).
template <typename Scalar>
ag::Tensor<Scalar> modulate(const ag::Tensor<Scalar>& v, const ag::Tensor<Scalar>& gamma, const ag::Tensor<Scalar>& beta) {
  const int c = v.shape().c;
  return ag::add(ag::mul(ag::broadcast_channels(gamma, c), v), ag::broadcast_channels(beta, c));
}

template <typename Scalar>
ag::Tensor<Scalar> transfer_graph(const nn::NetworkBundle<Scalar>& b, const ag::Tensor<Scalar>& x,
                                  const amm::FaceGeometryCache<Scalar>& gx, const ag::Tensor<Scalar>& y1,
                                  const amm::FaceGeometryCache<Scalar>& gy, Scalar visual_weight) {
  ag::Tensor<Scalar> vx = nn::stnet_encode(b, x);
  auto style = morph_makeup(b, vx, gx, y1, gy, visual_weight);
  return nn::stnet_decode(b, modulate(vx, style.gamma, style.beta));
}

template <typename Scalar>
ag::Tensor<Scalar> removal_graph(const nn::NetworkBundle<Scalar>& b, const ag::Tensor<Scalar>& yr) {
  auto id = nn::idnet_forward(b, yr);
  ag::Tensor<Scalar> v = nn::stnet_encode(b, yr);
  return nn::stnet_decode(b, modulate(v, id.gamma, id.beta));
}

}  // namespace psgan
