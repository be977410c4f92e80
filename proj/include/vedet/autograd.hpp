#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records every operation of one forward pass. Vars are handles into
// the tape; calling Tape::backward on a scalar Var propagates gradients to
// every node and accumulates them into the referenced Parameters.

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vedet::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// A learnable tensor with an accumulated gradient.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  /// Learning-rate multiplier group ("backbone" parameters are scaled).
  bool backbone = false;

  Parameter() = default;
  Parameter(std::string n, Mat v, bool is_backbone = false)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())),
        backbone(is_backbone) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  Var constant(Mat value);
  Var param(Parameter& p);

  /// Records a node. `backward` receives the tape and the node id and must
  /// push the node's gradient into its inputs via accumulate().
  Var record(Mat value, bool requires_grad, std::function<void(Tape&, int)> backward);

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  void accumulate(int id, const Mat& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to every
  /// recorded parameter.
  void backward(Var out);
  std::size_t size() const { return nodes_.size(); }

  /// Dropout randomness for this pass; null disables dropout.
  std::mt19937_64* rng = nullptr;
  bool training = false;

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, int)> backward;
  };
  std::deque<Node> nodes_;
};

// Elementwise and structural operations. Shapes must agree exactly unless
// noted otherwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a (n x m) + row (1 x m) broadcast over rows.
Var add_row(Var a, Var row);
/// a (n x m) * row (1 x m) broadcast over rows.
Var mul_row(Var a, Var row);
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
/// log(x / (1 - x)) after clamping x to [eps, 1 - eps]; zero gradient where clamped.
Var inverse_sigmoid(Var a, double eps = 1e-5);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const int> rows);
Var sum(Var a);
/// Inverted dropout; identity unless the tape is training with an rng.
Var dropout(Var a, double rate);

/// Per-row Fourier expansion: for every scalar x and band f emits
/// sin(f*pi*x), cos(f*pi*x); output column = (i * k + b) * 2 + {0, 1}.
Var fourier(Var a, std::span<const double> freqs);

/// 3x3-style 2D convolution over a batch stored as (C_in, N*H*W).
struct ConvShape {
  int batch = 1, in_channels = 1, height = 1, width = 1;
  int kernel = 3, stride = 1, padding = 1;
  int out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};
/// weight: (C_out, C_in*k*k), bias: (C_out, 1). Output (C_out, N*H'*W').
Var conv2d(Var x, Var weight, Var bias, const ConvShape& shape);

/// Sum over all entries of the sigmoid focal loss between logits and a
/// {0,1} target matrix of the same shape.
Var sigmoid_focal_loss(Var logits, const Mat& targets, double alpha, double gamma);
/// sum_ij w_i * |a_ij - target_ij|, one weight per row.
Var weighted_l1(Var a, const Mat& target, std::span<const double> row_weights);

}  // namespace vedet::ag
