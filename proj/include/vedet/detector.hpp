#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <vector>

#include "vedet/geo_encoding.hpp"
#include "vedet/geometry.hpp"
#include "vedet/image.hpp"
#include "vedet/nn.hpp"
#include "vedet/scene.hpp"

namespace vedet {

struct DecoderConfig {
  int num_layers = 3;
  int embed_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  double dropout = 0.0;
  /// Self-attention stays within the queries of one view.
  bool per_view_self_attention = false;
};

struct ModelConfig {
  DecoderConfig decoder;
  FourierConfig fourier;
  int geometry_hidden = 1920;
  /// Output channels of every backbone block except the last, which
  /// produces embed_dim. One block per factor of two in 1/alpha.
  std::vector<int> backbone_channels{16, 32, 64};
  int reg_hidden = 512;
  int num_queries = 50;
  /// Extra global-view query sets used only during training ("+V*M queries,
  /// no view equivariance" baseline). Zero for the regular model.
  int extra_query_sets = 0;
  int num_classes = 3;
  ObjectRange range;
  EncodingAblation ablation;
  bool two_sweeps = true;
  bool ray_cell_center = false;
  std::uint64_t init_seed = 0;
};

/// Number of box regression scalars per view: center 3, log dims 3,
/// (cos, sin) 2, velocity 3.
inline constexpr int kBoxCode = 11;

/// Learnable query points stored as unconstrained logits.
struct QueryPointSet {
  nn::Parameter* logits = nullptr;
  ObjectRange range;

  /// range.min + sigmoid(logits) * span, one row per point.
  nn::Var realize(nn::Tape& tape) const;
  int size() const { return static_cast<int>(logits->value.rows()); }
};

/// Provenance of one decoder query.
struct QueryIndex {
  int point;
  int view;
};

struct QueryBatch {
  nn::Var embeddings;  // (P*(V+1), C), view-major
  nn::Var base_logits;  // (P*(V+1), 3) logit-space query points in each view
  std::vector<QueryIndex> index;
  int num_points = 0;
  int num_views = 1;
};

struct TokenBatch {
  nn::Var tokens;      // (T, C)
  nn::Var encodings;   // (T, C)
};

/// Per-layer raw outputs.
struct LayerOutput {
  nn::Var cls_logits;  // (P, K) from view-0 queries
  nn::Var box;         // (P*(V+1), 11) normalized box code
};

struct ForwardResult {
  std::vector<LayerOutput> layers;
  std::vector<Pose> views;  // views[0] is the global frame
  int num_points = 0;
  int num_views = 1;
};

struct DecodedPrediction {
  Box3D box;
  int point = 0;
  int view = 0;
};

/// Decoded predictions of one layer.
struct LayerPrediction {
  nn::Mat scores;  // (P, K) sigmoid probabilities
  std::vector<DecodedPrediction> boxes;  // view-major, P*(V+1)
};

/// Everything the detector needs from one sample.
struct DetectorInput {
  std::vector<const Image*> images;           // current sweep, one per camera
  std::vector<const Image*> previous_images;  // empty in single-sweep mode
  std::vector<Camera> cameras;
  /// Previous-sweep cameras in the previous global frame.
  std::vector<Camera> previous_cameras;
  Pose ego_motion;

  static DetectorInput from_scene(const Scene& scene, const SceneImages& images, bool two_sweeps);
};

struct ForwardOptions {
  /// Virtual views (the global view is always prepended).
  std::vector<Pose> virtual_views;
  bool use_extra_queries = false;
};

/// Normalized 11-scalar box code in the frame the box is expressed in.
Eigen::Matrix<double, kBoxCode, 1> encode_box(const Box3D& box, const ObjectRange& range);
Box3D decode_box(const Eigen::Matrix<double, kBoxCode, 1>& code, const ObjectRange& range, int class_id);

class Detector {
 public:
  explicit Detector(const ModelConfig& cfg);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  /// N images -> (C, N*H'*W') features.
  nn::Var extract_features(nn::Tape& tape, const std::vector<const Image*>& images) const;
  /// Flattened tokens and their geometric encodings for one or two sweeps.
  TokenBatch concat_sweeps(nn::Tape& tape, nn::Var features_t, const std::vector<Camera>& cameras_t,
                           const nn::Var* features_prev, const std::vector<Camera>& cameras_prev,
                           const Pose& ego_motion) const;
  /// views[0] must be the identity.
  QueryBatch build_queries(nn::Tape& tape, const std::vector<Pose>& views, int num_points) const;
  std::vector<nn::Var> decode(nn::Tape& tape, const TokenBatch& tokens, const QueryBatch& queries) const;
  LayerOutput heads(nn::Tape& tape, nn::Var layer_queries, const QueryBatch& queries) const;

  ForwardResult forward(nn::Tape& tape, const DetectorInput& input, const ForwardOptions& opts) const;

  /// Decodes one layer of a forward pass into boxes expressed in each
  /// query's own view.
  LayerPrediction predict(const ForwardResult& fwd, int layer) const;

  const GeometryEncoder& feature_encoder() const { return enc_; }
  const GeometryEncoder& query_encoder() const { return dec_; }
  const QueryPointSet& query_points() const { return points_; }
  /// Number of forward passes that constructed virtual views.
  long virtual_view_passes() const { return virtual_view_passes_.load(); }

 private:
  struct DecoderLayer {
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::LayerNorm norm1, norm2, norm3;
    nn::Linear ffn1, ffn2;
  };

  ModelConfig cfg_;
  nn::ParameterStore store_;
  std::vector<std::pair<nn::Parameter*, nn::Parameter*>> conv_;
  GeometryEncoder enc_, dec_;
  QueryPointSet points_;
  std::vector<DecoderLayer> layers_;
  nn::Linear cls_head_;
  nn::Linear reg1_, reg2_, reg3_;
  mutable std::atomic<long> virtual_view_passes_{0};
};

}  // namespace vedet
