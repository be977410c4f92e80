#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "vedet/autograd.hpp"

namespace vedet::nn {

using ag::Mat;
using ag::Parameter;
using ag::Tape;
using ag::Var;

/// Owns every learnable tensor of a model, addressed by path strings such as
/// "decoder.0.cross_attn.q.weight". Insertion order is stable.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, Mat init, bool backbone = false);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Uniform(-bound, bound) matrix drawn from `rng`.
Mat uniform_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound);

/// y = x W + b with W stored (in, out).
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Linear create(ParameterStore& store, const std::string& name, int in, int out,
                       std::mt19937_64& rng, bool backbone = false);
  Var operator()(Tape& tape, Var x) const;
  int in_features() const { return static_cast<int>(weight->value.rows()); }
  int out_features() const { return static_cast<int>(weight->value.cols()); }
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& name, int dim);
  Var operator()(Tape& tape, Var x) const;
};

/// Two linear maps with a ReLU between them.
struct Mlp2 {
  Linear fc1, fc2;

  static Mlp2 create(ParameterStore& store, const std::string& name, int in, int hidden, int out,
                     std::mt19937_64& rng);
  Var operator()(Tape& tape, Var x) const;
};

struct MultiHeadAttention {
  Linear q, k, v, out;
  int heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name, int dim,
                                   int heads, std::mt19937_64& rng);
  /// query (n, C), key (m, C), value (m, C) -> (n, C).
  Var operator()(Tape& tape, Var query, Var key, Var value) const;
};

}  // namespace vedet::nn
