#include "vedet/detector.hpp"

#include <cmath>
#include <string>

#include "vedet/errors.hpp"

namespace vedet {

namespace {

ag::Mat row_of(const Vec3& v) {
  ag::Mat m(1, 3);
  m << v.x(), v.y(), v.z();
  return m;
}

}  // namespace

nn::Var QueryPointSet::realize(nn::Tape& tape) const {
  const nn::Var s = ag::sigmoid(tape.param(*logits));
  return ag::add_row(ag::mul_row(s, tape.constant(row_of(range.span()))), tape.constant(row_of(range.min)));
}

Eigen::Matrix<double, kBoxCode, 1> encode_box(const Box3D& box, const ObjectRange& range) {
  Eigen::Matrix<double, kBoxCode, 1> c;
  const Vec3 center = (box.center - range.min).cwiseQuotient(range.span());
  c << center, box.dims.array().log().matrix(), std::cos(box.yaw), std::sin(box.yaw), box.velocity;
  return c;
}

Box3D decode_box(const Eigen::Matrix<double, kBoxCode, 1>& code, const ObjectRange& range, int class_id) {
  Box3D b;
  b.center = range.min + code.head<3>().cwiseProduct(range.span());
  b.dims = code.segment<3>(3).array().exp().matrix();
  b.yaw = wrap_angle(std::atan2(code[7], code[6]));
  b.velocity = code.tail<3>();
  b.class_id = class_id;
  return b;
}

DetectorInput DetectorInput::from_scene(const Scene& scene, const SceneImages& images, bool two_sweeps) {
  DetectorInput in;
  for (const Image& img : images.current) in.images.push_back(&img);
  in.cameras = scene.rig;
  if (two_sweeps) {
    if (images.previous.size() != images.current.size()) {
      throw StructuralError("two-sweep input needs one previous image per camera");
    }
    for (const Image& img : images.previous) in.previous_images.push_back(&img);
    in.previous_cameras = scene.rig;
    in.ego_motion = scene.ego_motion;
  }
  return in;
}

Detector::Detector(const ModelConfig& cfg) : cfg_(cfg) {
  const DecoderConfig& dc = cfg.decoder;
  if (dc.num_layers < 1) throw ConfigError("model: num_layers must be >= 1");
  if (dc.embed_dim % dc.num_heads != 0) throw ConfigError("model: embed_dim must be divisible by num_heads");
  if (cfg.num_queries < 1 || cfg.extra_query_sets < 0) throw ConfigError("model: num_queries must be >= 1");
  std::mt19937_64 rng(cfg.init_seed);

  int in_ch = 3;
  std::vector<int> channels = cfg.backbone_channels;
  channels.push_back(dc.embed_dim);
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const int fan_in = in_ch * 9;
    const std::string name = "backbone." + std::to_string(i);
    auto& w = store_.create(name + ".weight", nn::uniform_init(rng, channels[i], fan_in, std::sqrt(6.0 / fan_in)), true);
    auto& b = store_.create(name + ".bias", nn::Mat::Zero(channels[i], 1), true);
    conv_.emplace_back(&w, &b);
    in_ch = channels[i];
  }

  enc_ = GeometryEncoder(store_, "geometry_enc", cfg.fourier, cfg.geometry_hidden, dc.embed_dim, cfg.ablation, rng);
  dec_ = GeometryEncoder(store_, "geometry_dec", cfg.fourier, cfg.geometry_hidden, dc.embed_dim, cfg.ablation, rng);
  dec_.set_position_normalization(cfg.range.min, cfg.range.span());

  const int total_points = cfg.num_queries * (1 + cfg.extra_query_sets);
  points_.logits = &store_.create("query_points", nn::uniform_init(rng, total_points, 3, 2.0));
  points_.range = cfg.range;

  for (int l = 0; l < dc.num_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayer layer;
    layer.self_attn = nn::MultiHeadAttention::create(store_, p + ".self_attn", dc.embed_dim, dc.num_heads, rng);
    layer.cross_attn = nn::MultiHeadAttention::create(store_, p + ".cross_attn", dc.embed_dim, dc.num_heads, rng);
    layer.norm1 = nn::LayerNorm::create(store_, p + ".norm1", dc.embed_dim);
    layer.norm2 = nn::LayerNorm::create(store_, p + ".norm2", dc.embed_dim);
    layer.norm3 = nn::LayerNorm::create(store_, p + ".norm3", dc.embed_dim);
    layer.ffn1 = nn::Linear::create(store_, p + ".ffn1", dc.embed_dim, dc.ffn_dim, rng);
    layer.ffn2 = nn::Linear::create(store_, p + ".ffn2", dc.ffn_dim, dc.embed_dim, rng);
    layers_.push_back(layer);
  }

  cls_head_ = nn::Linear::create(store_, "head.cls", dc.embed_dim, cfg.num_classes, rng);
  // Focal-loss prior: initial foreground probability 0.01.
  cls_head_.bias->value.setConstant(-std::log((1.0 - 0.01) / 0.01));
  reg1_ = nn::Linear::create(store_, "head.reg.fc1", dc.embed_dim, cfg.reg_hidden, rng);
  reg2_ = nn::Linear::create(store_, "head.reg.fc2", cfg.reg_hidden, cfg.reg_hidden, rng);
  reg3_ = nn::Linear::create(store_, "head.reg.fc3", cfg.reg_hidden, kBoxCode, rng);
}

nn::Var Detector::extract_features(nn::Tape& tape, const std::vector<const Image*>& images) const {
  if (images.empty()) throw StructuralError("extract_features: no images");
  const int h = images[0]->height, w = images[0]->width;
  const int stride = 1 << conv_.size();
  if (h % stride != 0 || w % stride != 0) {
    throw ConfigError("backbone: image size " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by the total stride " + std::to_string(stride));
  }
  nn::Var x = tape.constant(images_to_matrix(images));
  ag::ConvShape s;
  s.batch = static_cast<int>(images.size());
  s.in_channels = 3;
  s.height = h;
  s.width = w;
  s.kernel = 3;
  s.stride = 2;
  s.padding = 1;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    x = ag::conv2d(x, tape.param(*conv_[i].first), tape.param(*conv_[i].second), s);
    if (i + 1 < conv_.size()) x = ag::relu(x);
    s.in_channels = static_cast<int>(conv_[i].first->value.rows());
    s.height = s.out_height();
    s.width = s.out_width();
  }
  return x;
}

TokenBatch Detector::concat_sweeps(nn::Tape& tape, nn::Var features_t, const std::vector<Camera>& cameras_t,
                                   const nn::Var* features_prev, const std::vector<Camera>& cameras_prev,
                                   const Pose& ego_motion) const {
  std::vector<Camera> cams = cameras_t;
  std::vector<nn::Var> feats{ag::transpose(features_t)};
  if (features_prev != nullptr) {
    for (Camera c : cameras_prev) {
      c.pose = pose_compose(ego_motion, c.pose);
      cams.push_back(c);
    }
    feats.push_back(ag::transpose(*features_prev));
  }
  std::vector<nn::Mat> rows;
  Eigen::Index total = 0;
  for (const Camera& c : cams) {
    rows.push_back(camera_geometry_rows(c, cfg_.ray_cell_center));
    total += rows.back().rows();
  }
  nn::Mat geo(total, 10);
  Eigen::Index r = 0;
  for (const nn::Mat& m : rows) {
    geo.middleRows(r, m.rows()) = m;
    r += m.rows();
  }
  TokenBatch out;
  out.tokens = feats.size() == 1 ? feats[0] : ag::concat_rows(feats);
  if (out.tokens.rows() != total) {
    throw StructuralError("feature grid does not match camera image size and alpha");
  }
  out.encodings = enc_.forward(tape, tape.constant(std::move(geo)));
  return out;
}

QueryBatch Detector::build_queries(nn::Tape& tape, const std::vector<Pose>& views, int num_points) const {
  if (views.empty() || !(views[0] == Pose::identity())) {
    throw StructuralError("build_queries: views[0] must be the global frame");
  }
  if (views.size() > 1) ++virtual_view_passes_;
  const nn::Var all_logits = tape.param(*points_.logits);
  const nn::Var logits = num_points == points_.size() ? all_logits : ag::slice_rows(all_logits, 0, num_points);
  const Vec3 span = cfg_.range.span();
  const nn::Var realized = ag::add_row(ag::mul_row(ag::sigmoid(logits), tape.constant(row_of(span))),
                                       tape.constant(row_of(cfg_.range.min)));
  std::vector<nn::Var> embeds, bases;
  QueryBatch q;
  q.num_points = num_points;
  q.num_views = static_cast<int>(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    const Pose& view = views[v];
    nn::Var in_view = realized;
    nn::Var base = logits;
    if (v > 0) {
      // Row-vector form of R^T (c - t).
      in_view = ag::matmul(ag::add_row(realized, tape.constant(row_of(-view.translation))),
                           tape.constant(view.rotmat()));
      const nn::Var norm = ag::add_row(ag::mul_row(in_view, tape.constant(row_of(span.cwiseInverse()))),
                                       tape.constant(row_of(-cfg_.range.min.cwiseQuotient(span))));
      base = ag::inverse_sigmoid(norm);
    }
    nn::Mat quat(num_points, 4), trans(num_points, 3);
    quat.rowwise() = view.rotation.coeffs().transpose();
    trans.rowwise() = view.translation.transpose();
    const std::vector<nn::Var> parts{in_view, tape.constant(std::move(quat)), tape.constant(std::move(trans))};
    embeds.push_back(dec_.forward(tape, ag::concat_cols(parts)));
    bases.push_back(base);
    for (int j = 0; j < num_points; ++j) q.index.push_back({j, static_cast<int>(v)});
  }
  q.embeddings = embeds.size() == 1 ? embeds[0] : ag::concat_rows(embeds);
  q.base_logits = bases.size() == 1 ? bases[0] : ag::concat_rows(bases);
  return q;
}

std::vector<nn::Var> Detector::decode(nn::Tape& tape, const TokenBatch& tokens, const QueryBatch& queries) const {
  const double rate = cfg_.decoder.dropout;
  const nn::Var pos = queries.embeddings;
  const nn::Var keys = ag::add(tokens.tokens, tokens.encodings);
  nn::Var tgt = tape.constant(nn::Mat::Zero(pos.rows(), pos.cols()));
  std::vector<nn::Var> outs;
  for (const DecoderLayer& layer : layers_) {
    const nn::Var q1 = ag::add(tgt, pos);
    nn::Var sa;
    if (cfg_.decoder.per_view_self_attention && queries.num_views > 1) {
      std::vector<nn::Var> blocks;
      for (int v = 0; v < queries.num_views; ++v) {
        const nn::Var qv = ag::slice_rows(q1, v * queries.num_points, queries.num_points);
        blocks.push_back(layer.self_attn(tape, qv, qv, ag::slice_rows(tgt, v * queries.num_points, queries.num_points)));
      }
      sa = ag::concat_rows(blocks);
    } else {
      sa = layer.self_attn(tape, q1, q1, tgt);
    }
    tgt = layer.norm1(tape, ag::add(tgt, ag::dropout(sa, rate)));
    const nn::Var q2 = ag::add(tgt, pos);
    tgt = layer.norm2(tape, ag::add(tgt, ag::dropout(layer.cross_attn(tape, q2, keys, tokens.tokens), rate)));
    const nn::Var ff = layer.ffn2(tape, ag::relu(layer.ffn1(tape, tgt)));
    tgt = layer.norm3(tape, ag::add(tgt, ag::dropout(ff, rate)));
    outs.push_back(tgt);
  }
  return outs;
}

LayerOutput Detector::heads(nn::Tape& tape, nn::Var layer_queries, const QueryBatch& queries) const {
  LayerOutput out;
  const nn::Var global_rows = queries.num_views == 1 ? layer_queries : ag::slice_rows(layer_queries, 0, queries.num_points);
  out.cls_logits = cls_head_(tape, global_rows);
  const nn::Var reg = reg3_(tape, ag::relu(reg2_(tape, ag::relu(reg1_(tape, layer_queries)))));
  const nn::Var center = ag::sigmoid(ag::add(queries.base_logits, ag::slice_cols(reg, 0, 3)));
  const std::vector<nn::Var> parts{center, ag::slice_cols(reg, 3, kBoxCode - 3)};
  out.box = ag::concat_cols(parts);
  return out;
}

ForwardResult Detector::forward(nn::Tape& tape, const DetectorInput& input, const ForwardOptions& opts) const {
  if (input.images.size() != input.cameras.size()) {
    throw StructuralError("forward: one image per camera required");
  }
  const bool two = cfg_.two_sweeps && !input.previous_images.empty();
  if (cfg_.two_sweeps && input.previous_images.empty()) {
    throw StructuralError("forward: two-sweep model needs previous-sweep images");
  }
  std::vector<const Image*> all = input.images;
  if (two) all.insert(all.end(), input.previous_images.begin(), input.previous_images.end());
  const nn::Var feats = extract_features(tape, all);
  const Eigen::Index per_sweep = feats.cols() / (two ? 2 : 1);
  TokenBatch tokens;
  if (two) {
    const nn::Var cur = ag::slice_cols(feats, 0, per_sweep);
    const nn::Var prev = ag::slice_cols(feats, per_sweep, per_sweep);
    tokens = concat_sweeps(tape, cur, input.cameras, &prev, input.previous_cameras, input.ego_motion);
  } else {
    tokens = concat_sweeps(tape, feats, input.cameras, nullptr, {}, Pose::identity());
  }

  ForwardResult res;
  res.views.push_back(Pose::identity());
  res.views.insert(res.views.end(), opts.virtual_views.begin(), opts.virtual_views.end());
  const int points = opts.use_extra_queries ? points_.size() : cfg_.num_queries;
  const QueryBatch queries = build_queries(tape, res.views, points);
  res.num_points = queries.num_points;
  res.num_views = queries.num_views;
  for (const nn::Var& q : decode(tape, tokens, queries)) res.layers.push_back(heads(tape, q, queries));
  return res;
}

LayerPrediction Detector::predict(const ForwardResult& fwd, int layer) const {
  const LayerOutput& out = fwd.layers.at(static_cast<std::size_t>(layer));
  LayerPrediction pred;
  pred.scores = out.cls_logits.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  const nn::Mat& box = out.box.value();
  for (Eigen::Index r = 0; r < box.rows(); ++r) {
    const int point = static_cast<int>(r % fwd.num_points);
    const int view = static_cast<int>(r / fwd.num_points);
    Eigen::Index cls = 0;
    pred.scores.row(point).maxCoeff(&cls);
    const Eigen::Matrix<double, kBoxCode, 1> code = box.row(r).transpose();
    pred.boxes.push_back({decode_box(code, cfg_.range, static_cast<int>(cls)), point, view});
  }
  return pred;
}

}  // namespace vedet
