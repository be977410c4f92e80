#pragma once

#include <random>
#include <string>
#include <vector>

#include "vedet/geometry.hpp"
#include "vedet/nn.hpp"

namespace vedet {

/// Fourier band layout: `bands` frequencies evenly spaced over [0, f_max],
/// both endpoints included.
struct FourierConfig {
  double f_max = 8.0;
  int bands = 64;

  std::vector<double> frequencies() const;
};

/// For every input scalar (outermost), band (ascending) emits (sin, cos) of
/// f * pi * x. Output length is 2 * bands * x.size().
Eigen::VectorXd fourier_encode(const Eigen::VectorXd& x, const FourierConfig& cfg);

/// Ray, camera rotation and camera translation of one feature cell.
struct GeometricTriplet {
  Vec3 ray = Vec3::UnitZ();
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  Eigen::Matrix<double, 10, 1> flatten() const;
};

/// A query point expressed in a query view, plus that view's pose.
struct QueryGeometry {
  Vec3 point_in_view = Vec3::Zero();
  Quaternion view_rotation;
  Vec3 view_translation = Vec3::Zero();

  static QueryGeometry from_global(const Vec3& point, const Pose& view);
  Eigen::Matrix<double, 10, 1> flatten() const;
};

/// Ablation switches for the geometry inputs. Masking zeroes entries and
/// keeps every shape unchanged.
struct EncodingAblation {
  bool use_fourier = true;
  bool mask_rotation = false;
  bool mask_translation = false;
};

/// Fourier expansion followed by a two-layer map to the embedding width.
/// The first three inputs are affinely normalized as (x - offset) / scale
/// before expansion.
class GeometryEncoder {
 public:
  GeometryEncoder() = default;
  GeometryEncoder(nn::ParameterStore& store, const std::string& name, const FourierConfig& cfg,
                  int hidden, int embed_dim, const EncodingAblation& ablation,
                  std::mt19937_64& rng);

  void set_position_normalization(const Vec3& offset, const Vec3& scale);
  /// rows: (n, 10) raw geometry -> (n, C).
  nn::Var forward(nn::Tape& tape, nn::Var rows) const;
  /// Normalizes positions and applies the ablation masks.
  nn::Var preprocess(nn::Tape& tape, nn::Var rows) const;

  const FourierConfig& fourier() const { return cfg_; }
  const EncodingAblation& ablation() const { return ablation_; }
  const nn::Mlp2& mlp() const { return mlp_; }
  int input_width() const;

 private:
  nn::Var expand(nn::Tape& tape, nn::Var pre) const;

  FourierConfig cfg_;
  EncodingAblation ablation_;
  std::vector<double> freqs_;
  nn::Mlp2 mlp_;
  Vec3 offset_ = Vec3::Zero();
  Vec3 scale_ = Vec3::Ones();
};

Eigen::VectorXd encode_feature_geometry(const GeometricTriplet& triplet,
                                        const GeometryEncoder& encoder);
Eigen::VectorXd encode_query_geometry(const QueryGeometry& qg, const GeometryEncoder& encoder);

/// Raw geometry rows (H'*W', 10) for every feature cell of one camera,
/// row-major over (v, u).
nn::Mat camera_geometry_rows(const Camera& camera, bool cell_center = false);

/// One (C, H', W') grid per camera, stored as (C, H'*W').
std::vector<nn::Mat> build_scene_encodings(const std::vector<Camera>& cameras, int feature_h,
                                           int feature_w, const GeometryEncoder& encoder);

}  // namespace vedet
