#include "vedet/geo_encoding.hpp"

#include <cmath>

#include "vedet/errors.hpp"

namespace vedet {

std::vector<double> FourierConfig::frequencies() const {
  if (bands <= 0 || !(f_max > 0.0)) {
    throw ConfigError("fourier: f_max must be > 0 and bands >= 1");
  }
  std::vector<double> f(static_cast<std::size_t>(bands));
  for (int b = 0; b < bands; ++b) f[b] = bands == 1 ? 0.0 : f_max * b / (bands - 1);
  return f;
}

Eigen::VectorXd fourier_encode(const Eigen::VectorXd& x, const FourierConfig& cfg) {
  const std::vector<double> f = cfg.frequencies();
  const Eigen::Index k = static_cast<Eigen::Index>(f.size());
  Eigen::VectorXd out(2 * k * x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    for (Eigen::Index b = 0; b < k; ++b) {
      const double arg = f[b] * kPi * x[i];
      out[(i * k + b) * 2] = std::sin(arg);
      out[(i * k + b) * 2 + 1] = std::cos(arg);
    }
  }
  return out;
}

Eigen::Matrix<double, 10, 1> GeometricTriplet::flatten() const {
  Eigen::Matrix<double, 10, 1> v;
  v << ray, rotation.coeffs(), translation;
  return v;
}

QueryGeometry QueryGeometry::from_global(const Vec3& point, const Pose& view) {
  return {pose_inverse(view).apply(point), view.rotation, view.translation};
}

Eigen::Matrix<double, 10, 1> QueryGeometry::flatten() const {
  Eigen::Matrix<double, 10, 1> v;
  v << point_in_view, view_rotation.coeffs(), view_translation;
  return v;
}

GeometryEncoder::GeometryEncoder(nn::ParameterStore& store, const std::string& name,
                                 const FourierConfig& cfg, int hidden, int embed_dim,
                                 const EncodingAblation& ablation, std::mt19937_64& rng)
    : cfg_(cfg), ablation_(ablation), freqs_(cfg.frequencies()) {
  mlp_ = nn::Mlp2::create(store, name, input_width(), hidden, embed_dim, rng);
}

int GeometryEncoder::input_width() const {
  return ablation_.use_fourier ? 2 * static_cast<int>(freqs_.size()) * 10 : 10;
}

void GeometryEncoder::set_position_normalization(const Vec3& offset, const Vec3& scale) {
  offset_ = offset;
  scale_ = scale;
}

nn::Var GeometryEncoder::preprocess(nn::Tape& tape, nn::Var rows) const {
  if (rows.cols() != 10) throw StructuralError("geometry rows must have 10 columns");
  nn::Mat mul = nn::Mat::Ones(1, 10);
  nn::Mat add = nn::Mat::Zero(1, 10);
  for (int a = 0; a < 3; ++a) {
    mul(0, a) = 1.0 / scale_[a];
    add(0, a) = -offset_[a] / scale_[a];
  }
  if (ablation_.mask_rotation) mul.middleCols(3, 4).setZero();
  if (ablation_.mask_translation) mul.middleCols(7, 3).setZero();
  return ag::add_row(ag::mul_row(rows, tape.constant(mul)), tape.constant(add));
}

nn::Var GeometryEncoder::expand(nn::Tape& tape, nn::Var pre) const {
  const nn::Var in = ablation_.use_fourier ? ag::fourier(pre, freqs_) : pre;
  return mlp_(tape, in);
}

nn::Var GeometryEncoder::forward(nn::Tape& tape, nn::Var rows) const {
  return expand(tape, preprocess(tape, rows));
}

namespace {

Eigen::VectorXd encode_one(const Eigen::Matrix<double, 10, 1>& flat, const GeometryEncoder& enc) {
  nn::Tape tape;
  const nn::Var out = enc.forward(tape, tape.constant(flat.transpose()));
  return out.value().row(0).transpose();
}

}  // namespace

Eigen::VectorXd encode_feature_geometry(const GeometricTriplet& triplet,
                                        const GeometryEncoder& encoder) {
  return encode_one(triplet.flatten(), encoder);
}

Eigen::VectorXd encode_query_geometry(const QueryGeometry& qg, const GeometryEncoder& encoder) {
  return encode_one(qg.flatten(), encoder);
}

nn::Mat camera_geometry_rows(const Camera& camera, bool cell_center) {
  const int fh = camera.feature_height(), fw = camera.feature_width();
  nn::Mat rows(static_cast<Eigen::Index>(fh) * fw, 10);
  const Eigen::Vector4d q = camera.pose.rotation.coeffs();
  for (int v = 0; v < fh; ++v) {
    for (int u = 0; u < fw; ++u) {
      const Vec3 r = compute_ray(camera, u, v, cell_center);
      auto row = rows.row(static_cast<Eigen::Index>(v) * fw + u);
      row << r.transpose(), q.transpose(), camera.pose.translation.transpose();
    }
  }
  return rows;
}

std::vector<nn::Mat> build_scene_encodings(const std::vector<Camera>& cameras, int feature_h,
                                           int feature_w, const GeometryEncoder& encoder) {
  std::vector<nn::Mat> grids;
  grids.reserve(cameras.size());
  for (const Camera& cam : cameras) {
    if (cam.feature_height() != feature_h || cam.feature_width() != feature_w) {
      throw ConfigError("feature grid " + std::to_string(feature_h) + "x" +
                        std::to_string(feature_w) + " inconsistent with camera image size and alpha");
    }
    nn::Tape tape;
    const nn::Var enc = encoder.forward(tape, tape.constant(camera_geometry_rows(cam)));
    grids.push_back(enc.value().transpose());
  }
  return grids;
}

}  // namespace vedet
