#pragma once

// Attentive makeup morphing: relative-position features, region-masked
// attention between a source and a reference face, morphing of the
// reference's makeup matrices onto the source geometry, and the style
// modulation / composition rules applied at the bottleneck.
//
// Pixel index i on an HxW grid is i = y * W + x. Feature grids are stored
// channel-planar (C x H x W), so a grid viewed as an (HW x C) column-major
// matrix has one row per pixel.

#include "psgan/autograd.hpp"
#include "psgan/face_assets.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace psgan::amm {

constexpr int kRelPosDim = 2 * kLandmarkCount;
constexpr double kDefaultVisualWeight = 0.01;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// C x H x W activations at bottleneck resolution.
template <typename Scalar>
struct FeatureGrid {
  int channels = 0;
  int height = 0;
  int width = 0;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> data;

  FeatureGrid() = default;
  FeatureGrid(int c, int h, int w)
      : channels(c), height(h), width(w), data(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(Eigen::Index(c) * h * w)) {}

  Eigen::Index pixels() const { return Eigen::Index(height) * width; }
  /// (HW x C) view, one row per pixel.
  Eigen::Map<const Matrix<Scalar>> pixel_rows() const { return {data.data(), pixels(), channels}; }
};

/// 1 x H x W scale or shift map.
template <typename Scalar>
struct ParamMap {
  int height = 0;
  int width = 0;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> data;

  ParamMap() = default;
  ParamMap(int h, int w, Scalar fill)
      : height(h), width(w), data(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Constant(Eigen::Index(h) * w, fill)) {}
};

/// Channel-expanded (Gamma, B) pair.
template <typename Scalar>
struct StyleTensor {
  FeatureGrid<Scalar> gamma;
  FeatureGrid<Scalar> beta;
};

template <typename Scalar>
struct AttentionMatrix {
  /// Rows index source pixels, columns reference pixels.
  Matrix<Scalar> weights;
  /// Row scores before masking and softmax, kept for visualisation.
  Matrix<Scalar> scores;
  std::vector<std::uint8_t> valid;
};

/// Row i = [x_i - x(l_1), ..., x_i - x(l_68), y_i - y(l_1), ..., y_i - y(l_68)].
/// Landmarks must already be expressed in grid coordinates.
template <typename Scalar>
Matrix<Scalar> rel_pos_features(int height, int width, const Landmarks& landmarks) {
  Matrix<Scalar> p(Eigen::Index(height) * width, kRelPosDim);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const Eigen::Index i = Eigen::Index(y) * width + x;
      for (int k = 0; k < kLandmarkCount; ++k) {
        p(i, k) = Scalar(x) - Scalar(landmarks(k, 0));
        p(i, kLandmarkCount + k) = Scalar(y) - Scalar(landmarks(k, 1));
      }
    }
  return p;
}

/// Divides each row by its two-norm; zero rows stay zero.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& p) {
  Matrix<Scalar> out = p;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Scalar n = out.row(i).norm();
    if (n > Scalar(0)) out.row(i) /= n;
    else out.row(i).setZero();
  }
  return out;
}

namespace detail {

/// Masked, max-stabilised row softmax over `scores`. Entries whose labels
/// differ, or whose source label is background, are exactly zero.
template <typename Scalar>
void masked_softmax(const Matrix<Scalar>& scores, std::span<const std::uint8_t> labels_x,
                    std::span<const std::uint8_t> labels_y, Matrix<Scalar>& weights, std::vector<std::uint8_t>& valid) {
  const Eigen::Index rows = scores.rows(), cols = scores.cols();
  weights.setZero(rows, cols);
  valid.assign(std::size_t(rows), 0);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::uint8_t li = labels_x[std::size_t(i)];
    if (li == 0) continue;
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < cols; ++j)
      if (labels_y[std::size_t(j)] == li) peak = std::max(peak, scores(i, j));
    if (peak == -std::numeric_limits<Scalar>::infinity()) continue;
    Scalar total = 0;
    for (Eigen::Index j = 0; j < cols; ++j)
      if (labels_y[std::size_t(j)] == li) {
        const Scalar e = std::exp(scores(i, j) - peak);
        weights(i, j) = e;
        total += e;
      }
    weights.row(i) /= total;
    valid[std::size_t(i)] = 1;
  }
}

template <typename Scalar>
void check_labels(std::span<const std::uint8_t> labels, Eigen::Index pixels, const char* what) {
  if (Eigen::Index(labels.size()) != pixels)
    throw std::invalid_argument(std::string("attentive_matrix: ") + what + " label count does not match grid");
}

}  // namespace detail

/// Row-stochastic attention from source pixels (rows) to reference pixels
/// (columns). `vx`/`vy` are (HW x C) visual features, `px_hat`/`py_hat` are
/// row-normalised relative-position features. Background rows and rows
/// without any same-region reference pixel are flagged invalid and all-zero.
template <typename Scalar>
AttentionMatrix<Scalar> attentive_matrix(const Eigen::Ref<const Matrix<Scalar>>& vx,
                                         const Eigen::Ref<const Matrix<Scalar>>& vy,
                                         const Eigen::Ref<const Matrix<Scalar>>& px_hat,
                                         const Eigen::Ref<const Matrix<Scalar>>& py_hat,
                                         std::span<const std::uint8_t> labels_x, std::span<const std::uint8_t> labels_y,
                                         Scalar w) {
  if (vx.cols() != vy.cols() || px_hat.cols() != py_hat.cols() || vx.rows() != px_hat.rows() ||
      vy.rows() != py_hat.rows())
    throw std::invalid_argument("attentive_matrix: inconsistent input shapes");
  if (w < Scalar(0)) throw std::invalid_argument("attentive_matrix: visual weight must be >= 0");
  if (!vx.allFinite() || !vy.allFinite()) throw std::domain_error("attentive_matrix: NaN in visual features");
  detail::check_labels<Scalar>(labels_x, vx.rows(), "source");
  detail::check_labels<Scalar>(labels_y, vy.rows(), "reference");
  AttentionMatrix<Scalar> a;
  a.scores.noalias() = (w * w) * (vx * vy.transpose());
  a.scores.noalias() += px_hat * py_hat.transpose();
  detail::masked_softmax<Scalar>(a.scores, labels_x, labels_y, a.weights, a.valid);
  return a;
}

/// gamma~_i = sum_j A_ij gamma_j, beta likewise; invalid rows receive the
/// identity parameters (gamma = 1, beta = 0).
template <typename Scalar>
std::pair<ParamMap<Scalar>, ParamMap<Scalar>> morph_params(const AttentionMatrix<Scalar>& a,
                                                           const ParamMap<Scalar>& gamma, const ParamMap<Scalar>& beta,
                                                           int out_height, int out_width) {
  if (a.weights.cols() != gamma.data.size() || gamma.data.size() != beta.data.size() ||
      a.weights.rows() != Eigen::Index(out_height) * out_width)
    throw std::invalid_argument("morph_params: shape mismatch");
  ParamMap<Scalar> g(out_height, out_width, Scalar(1)), b(out_height, out_width, Scalar(0));
  Vector<Scalar> mg = a.weights * gamma.data.matrix();
  Vector<Scalar> mb = a.weights * beta.data.matrix();
  for (Eigen::Index i = 0; i < mg.size(); ++i)
    if (a.valid[std::size_t(i)]) {
      g.data(i) = mg(i);
      b.data(i) = mb(i);
    }
  return {g, b};
}

template <typename Scalar>
FeatureGrid<Scalar> expand_channels(const ParamMap<Scalar>& p, int channels) {
  if (channels < 1) throw std::invalid_argument("expand_to_tensors: channel count must be >= 1");
  FeatureGrid<Scalar> out(channels, p.height, p.width);
  const Eigen::Index n = p.data.size();
  for (int c = 0; c < channels; ++c) out.data.segment(c * n, n) = p.data;
  return out;
}

template <typename Scalar>
StyleTensor<Scalar> expand_to_tensors(const ParamMap<Scalar>& gamma, const ParamMap<Scalar>& beta, int channels) {
  return {expand_channels(gamma, channels), expand_channels(beta, channels)};
}

/// V~ = Gamma * V + B.
template <typename Scalar>
FeatureGrid<Scalar> apply_style(const FeatureGrid<Scalar>& v, const StyleTensor<Scalar>& style) {
  if (v.data.size() != style.gamma.data.size() || v.data.size() != style.beta.data.size())
    throw std::invalid_argument("apply_style: shape mismatch");
  FeatureGrid<Scalar> out = v;
  out.data = style.gamma.data * v.data + style.beta.data;
  return out;
}

template <typename Scalar>
StyleTensor<Scalar> identity_style(int channels, int height, int width) {
  StyleTensor<Scalar> s{FeatureGrid<Scalar>(channels, height, width), FeatureGrid<Scalar>(channels, height, width)};
  s.gamma.data.setOnes();
  return s;
}

/// Binary per-pixel mask on the feature grid (values 0 or 1).
using PixelMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>;

/// Gamma = sum_r mask_r * Gamma_r, B likewise. Pixels outside every mask
/// receive the identity style. Masks must be pairwise disjoint.
template <typename Scalar>
StyleTensor<Scalar> compose_partial(const std::vector<PixelMask>& masks, const std::vector<StyleTensor<Scalar>>& styles) {
  if (masks.empty() || masks.size() != styles.size())
    throw std::invalid_argument("compose_partial: masks and styles must be non-empty and of equal length");
  const auto& first = styles.front().gamma;
  const Eigen::Index pixels = first.pixels();
  PixelMask covered = PixelMask::Zero(pixels);
  for (const auto& m : masks) {
    if (m.size() != pixels) throw std::invalid_argument("compose_partial: mask size mismatch");
    if (((covered > 0) && (m > 0)).any()) throw std::invalid_argument("compose_partial: overlapping masks");
    covered = (covered > 0 || m > 0).template cast<std::uint8_t>();
  }
  StyleTensor<Scalar> out = identity_style<Scalar>(first.channels, first.height, first.width);
  for (std::size_t r = 0; r < masks.size(); ++r) {
    const auto& s = styles[r];
    if (s.gamma.data.size() != out.gamma.data.size() || s.beta.data.size() != out.beta.data.size())
      throw std::invalid_argument("compose_partial: style shape mismatch");
    for (int c = 0; c < first.channels; ++c)
      for (Eigen::Index i = 0; i < pixels; ++i)
        if (masks[r](i)) {
          out.gamma.data(c * pixels + i) = s.gamma.data(c * pixels + i);
          out.beta.data(c * pixels + i) = s.beta.data(c * pixels + i);
        }
  }
  return out;
}

/// Gamma = alpha * Gamma_1 + (1 - alpha) * Gamma_2, B likewise.
template <typename Scalar>
StyleTensor<Scalar> compose_interpolated(Scalar alpha, const StyleTensor<Scalar>& s1, const StyleTensor<Scalar>& s2) {
  if (!(alpha >= Scalar(0) && alpha <= Scalar(1)))
    throw std::invalid_argument("compose_interpolated: alpha must lie in [0, 1]");
  if (s1.gamma.data.size() != s2.gamma.data.size()) throw std::invalid_argument("compose_interpolated: shape mismatch");
  StyleTensor<Scalar> out = s1;
  out.gamma.data = alpha * s1.gamma.data + (Scalar(1) - alpha) * s2.gamma.data;
  out.beta.data = alpha * s1.beta.data + (Scalar(1) - alpha) * s2.beta.data;
  return out;
}

// ---------------------------------------------------------------------------
// Per-face geometry at bottleneck resolution.

template <typename Scalar>
struct FaceGeometryCache {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;
  Matrix<Scalar> p_hat;
};

/// Downscales parsing and landmarks by `factor` and precomputes normalised
/// relative-position features.
template <typename Scalar>
FaceGeometryCache<Scalar> face_geometry(const ParsingMap& parsing, const Landmarks& landmarks, int factor) {
  ParsingMap small = downscale_parsing(parsing, factor);
  FaceGeometryCache<Scalar> g;
  g.height = int(small.rows());
  g.width = int(small.cols());
  g.labels.assign(small.data(), small.data() + small.size());
  g.p_hat = normalize_rows<Scalar>(rel_pos_features<Scalar>(g.height, g.width, scale_landmarks(landmarks, factor)));
  return g;
}

// ---------------------------------------------------------------------------
// Differentiable versions used inside the training graph.

/// Attention as a [1,1,HWx,HWy] tensor (column-major matrix layout), with
/// gradients flowing into both feature maps. `valid` receives the row flags.
template <typename Scalar>
ag::Tensor<Scalar> attention(const ag::Tensor<Scalar>& vx, const ag::Tensor<Scalar>& vy,
                             const FaceGeometryCache<Scalar>& gx, const FaceGeometryCache<Scalar>& gy, Scalar w,
                             std::shared_ptr<std::vector<std::uint8_t>>& valid) {
  const ag::Shape sx = vx.shape(), sy = vy.shape();
  if (sx.n != 1 || sy.n != 1 || sx.c != sy.c) throw std::invalid_argument("attention: expects single-sample grids");
  const Eigen::Index nx = sx.plane(), ny = sy.plane();
  Eigen::Map<const Matrix<Scalar>> fx(vx.value().data(), nx, sx.c), fy(vy.value().data(), ny, sy.c);
  AttentionMatrix<Scalar> a = attentive_matrix<Scalar>(fx, fy, gx.p_hat, gy.p_hat, gx.labels, gy.labels, w);
  valid = std::make_shared<std::vector<std::uint8_t>>(std::move(a.valid));
  Eigen::Array<Scalar, Eigen::Dynamic, 1> flat = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(
      a.weights.data(), a.weights.size());
  const ag::Shape os{1, 1, int(nx), int(ny)};
  return ag::detail::make_result<Scalar>(os, std::move(flat), {vx, vy}, [w, nx, ny](ag::Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& py = *self.parents[1];
    const int c = px.shape.c;
    Eigen::Map<const Matrix<Scalar>> A(self.value.data(), nx, ny);
    Eigen::Map<const Matrix<Scalar>> dA(self.grad.data(), nx, ny);
    // Softmax backward: dS = A * (dA - rowsum(A * dA)).
    Vector<Scalar> inner = (A.array() * dA.array()).rowwise().sum().matrix();
    Matrix<Scalar> dS = (A.array() * (dA.colwise() - inner).array()).matrix();
    const Scalar w2 = w * w;
    Eigen::Map<const Matrix<Scalar>> fx(px.value.data(), nx, c), fy(py.value.data(), ny, c);
    if (px.requires_grad) {
      Eigen::Map<Matrix<Scalar>> gx(px.grad_buffer().data(), nx, c);
      gx.noalias() += w2 * (dS * fy);
    }
    if (py.requires_grad) {
      Eigen::Map<Matrix<Scalar>> gy(py.grad_buffer().data(), ny, c);
      gy.noalias() += w2 * (dS.transpose() * fx);
    }
  });
}

/// Morphs a [1,1,Hy,Wy] parameter map through attention `a` onto the source
/// grid (`out_h` x `out_w`); invalid rows are set to `identity_value`.
template <typename Scalar>
ag::Tensor<Scalar> morph(const ag::Tensor<Scalar>& a, std::shared_ptr<std::vector<std::uint8_t>> valid,
                         const ag::Tensor<Scalar>& param, int out_h, int out_w, Scalar identity_value) {
  const Eigen::Index nx = a.shape().h, ny = a.shape().w;
  if (param.value().size() != ny || nx != Eigen::Index(out_h) * out_w) throw std::invalid_argument("morph: shape mismatch");
  Eigen::Map<const Matrix<Scalar>> A(a.value().data(), nx, ny);
  Vector<Scalar> out = A * param.value().matrix();
  for (Eigen::Index i = 0; i < nx; ++i)
    if (!(*valid)[std::size_t(i)]) out(i) = identity_value;
  return ag::detail::make_result<Scalar>(
      ag::Shape{1, 1, out_h, out_w}, out.array(), {a, param}, [valid, nx, ny](ag::Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pp = *self.parents[1];
        Vector<Scalar> g = self.grad.matrix();
        for (Eigen::Index i = 0; i < nx; ++i)
          if (!(*valid)[std::size_t(i)]) g(i) = 0;
        if (pa.requires_grad) {
          Eigen::Map<Matrix<Scalar>> dA(pa.grad_buffer().data(), nx, ny);
          dA.noalias() += g * pp.value.matrix().transpose();
        }
        if (pp.requires_grad) {
          Eigen::Map<const Matrix<Scalar>> A(pa.value.data(), nx, ny);
          pp.grad_buffer().matrix().noalias() += A.transpose() * g;
        }
      });
}

}  // namespace psgan::amm
