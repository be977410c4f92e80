#include "vedet/nn.hpp"

#include <cmath>

#include "vedet/errors.hpp"

namespace vedet::nn {

Parameter& ParameterStore::create(const std::string& name, Mat init, bool backbone) {
  if (find(name) != nullptr) throw StructuralError("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(name, std::move(init), backbone));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

Mat uniform_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear Linear::create(ParameterStore& store, const std::string& name, int in, int out,
                      std::mt19937_64& rng, bool backbone) {
  const double bound = std::sqrt(6.0 / (in + out));
  Linear l;
  l.weight = &store.create(name + ".weight", uniform_init(rng, in, out, bound), backbone);
  l.bias = &store.create(name + ".bias", Mat::Zero(1, out), backbone);
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  return ag::add_row(ag::matmul(x, tape.param(*weight)), tape.param(*bias));
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gamma = &store.create(name + ".gamma", Mat::Ones(1, dim));
  ln.beta = &store.create(name + ".beta", Mat::Zero(1, dim));
  return ln;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return ag::layer_norm(x, tape.param(*gamma), tape.param(*beta));
}

Mlp2 Mlp2::create(ParameterStore& store, const std::string& name, int in, int hidden, int out,
                  std::mt19937_64& rng) {
  return {Linear::create(store, name + ".fc1", in, hidden, rng),
          Linear::create(store, name + ".fc2", hidden, out, rng)};
}

Var Mlp2::operator()(Tape& tape, Var x) const { return fc2(tape, ag::relu(fc1(tape, x))); }

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name,
                                              int dim, int heads, std::mt19937_64& rng) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(dim) + " not divisible by num_heads " +
                      std::to_string(heads));
  }
  MultiHeadAttention a;
  a.q = Linear::create(store, name + ".q", dim, dim, rng);
  a.k = Linear::create(store, name + ".k", dim, dim, rng);
  a.v = Linear::create(store, name + ".v", dim, dim, rng);
  a.out = Linear::create(store, name + ".out", dim, dim, rng);
  a.heads = heads;
  return a;
}

Var MultiHeadAttention::operator()(Tape& tape, Var query, Var key, Var value) const {
  const Var qp = q(tape, query);
  const Var kp = k(tape, key);
  const Var vp = v(tape, value);
  const Eigen::Index dim = qp.cols();
  const Eigen::Index hd = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Var> per_head;
  per_head.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Var qh = ag::slice_cols(qp, h * hd, hd);
    const Var kh = ag::slice_cols(kp, h * hd, hd);
    const Var vh = ag::slice_cols(vp, h * hd, hd);
    const Var attn = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
    per_head.push_back(ag::matmul(attn, vh));
  }
  return out(tape, heads == 1 ? per_head[0] : ag::concat_cols(per_head));
}

}  // namespace vedet::nn
