#include "vedet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "vedet/errors.hpp"

namespace vedet::ag {

namespace {

constexpr double kPi = 3.14159265358979323846;

void require(bool cond, const char* what) {
  if (!cond) throw StructuralError(std::string("autograd shape mismatch: ") + what);
}

bool any_grad(Var a) { return a.tape->requires_grad(a.id); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

// log(sigmoid(x)) computed without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

const Mat& Var::value() const { return tape->value(id); }
const Mat& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Mat value) { return record(std::move(value), false, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = record(p.value, true, nullptr);
  nodes_[v.id].param = &p;
  return v;
}

Var Tape::record(Mat value, bool requires_grad, std::function<void(Tape&, int)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) { accumulate_expr(id, g); }

void Tape::backward(Var out) {
  require(out.tape == this, "backward on foreign tape");
  require(out.value().size() == 1, "backward needs a scalar output");
  nodes_[out.id].grad = Mat::Ones(1, 1);
  for (int id = out.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  return a.tape->record(a.value() + b.value(), any_grad(a, b), [a, b](Tape& t, int id) {
    t.accumulate(a.id, t.grad(id));
    t.accumulate(b.id, t.grad(id));
  });
}

Var sub(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  return a.tape->record(a.value() - b.value(), any_grad(a, b), [a, b](Tape& t, int id) {
    t.accumulate(a.id, t.grad(id));
    t.accumulate_expr(b.id, -t.grad(id));
  });
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  return a.tape->record(a.value().cwiseProduct(b.value()), any_grad(a, b), [a, b](Tape& t, int id) {
    if (t.requires_grad(a.id)) t.accumulate_expr(a.id, t.grad(id).cwiseProduct(t.value(b.id)));
    if (t.requires_grad(b.id)) t.accumulate_expr(b.id, t.grad(id).cwiseProduct(t.value(a.id)));
  });
}

Var scale(Var a, double s) {
  return a.tape->record(a.value() * s, any_grad(a),
                        [a, s](Tape& t, int id) { t.accumulate_expr(a.id, t.grad(id) * s); });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->record(std::move(out), any_grad(a, row), [a, row](Tape& t, int id) {
    t.accumulate(a.id, t.grad(id));
    if (t.requires_grad(row.id)) t.accumulate_expr(row.id, t.grad(id).colwise().sum());
  });
}

Var mul_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row");
  Mat out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape->record(std::move(out), any_grad(a, row), [a, row](Tape& t, int id) {
    const Mat& g = t.grad(id);
    if (t.requires_grad(a.id)) {
      Mat ga = g.array().rowwise() * t.value(row.id).row(0).array();
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(row.id)) {
      t.accumulate_expr(row.id, g.cwiseProduct(t.value(a.id)).colwise().sum());
    }
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul");
  Mat out = a.value() * b.value();
  return a.tape->record(std::move(out), any_grad(a, b), [a, b](Tape& t, int id) {
    const Mat& g = t.grad(id);
    if (t.requires_grad(a.id)) t.accumulate_expr(a.id, g * t.value(b.id).transpose());
    if (t.requires_grad(b.id)) t.accumulate_expr(b.id, t.value(a.id).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt");
  Mat out = a.value() * b.value().transpose();
  return a.tape->record(std::move(out), any_grad(a, b), [a, b](Tape& t, int id) {
    const Mat& g = t.grad(id);
    if (t.requires_grad(a.id)) t.accumulate_expr(a.id, g * t.value(b.id));
    if (t.requires_grad(b.id)) t.accumulate_expr(b.id, g.transpose() * t.value(a.id));
  });
}

Var transpose(Var a) {
  return a.tape->record(a.value().transpose(), any_grad(a),
                        [a](Tape& t, int id) { t.accumulate_expr(a.id, t.grad(id).transpose()); });
}

Var relu(Var a) {
  return a.tape->record(a.value().cwiseMax(0.0), any_grad(a), [a](Tape& t, int id) {
    t.accumulate_expr(a.id, (t.value(a.id).array() > 0.0).select(t.grad(id), 0.0));
  });
}

Var sigmoid(Var a) {
  Mat out = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return a.tape->record(std::move(out), any_grad(a), [a](Tape& t, int id) {
    const Mat& y = t.value(id);
    t.accumulate_expr(a.id, t.grad(id).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var exp(Var a) {
  return a.tape->record(a.value().array().exp().matrix(), any_grad(a), [a](Tape& t, int id) {
    t.accumulate_expr(a.id, t.grad(id).cwiseProduct(t.value(id)));
  });
}

Var inverse_sigmoid(Var a, double eps) {
  Mat out = a.value().unaryExpr([eps](double x) {
    const double c = std::clamp(x, eps, 1.0 - eps);
    return std::log(c / (1.0 - c));
  });
  return a.tape->record(std::move(out), any_grad(a), [a, eps](Tape& t, int id) {
    Mat d = t.value(a.id).unaryExpr(
        [eps](double x) { return (x > eps && x < 1.0 - eps) ? 1.0 / (x * (1.0 - x)) : 0.0; });
    t.accumulate_expr(a.id, t.grad(id).cwiseProduct(d));
  });
}

Var softmax_rows(Var a) {
  Mat out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return a.tape->record(std::move(out), any_grad(a), [a](Tape& t, int id) {
    const Mat& y = t.value(id);
    const Mat& g = t.grad(id);
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Mat d = y.cwiseProduct((g.colwise() - dot));
    t.accumulate(a.id, d);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  require(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.cols() == x.cols(), "layer_norm");
  const Mat& xv = x.value();
  const Eigen::Index n = xv.cols();
  Eigen::VectorXd mean = xv.rowwise().mean();
  Mat xhat = xv.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((xhat.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt();
  xhat = xhat.array().colwise() * inv_std.array();
  Mat out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const bool rg = any_grad(x) || any_grad(gamma) || any_grad(beta);
  return x.tape->record(
      std::move(out), rg,
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Tape& t, int id) {
        const Mat& g = t.grad(id);
        if (t.requires_grad(gamma.id)) t.accumulate_expr(gamma.id, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(beta.id)) t.accumulate_expr(beta.id, g.colwise().sum());
        if (t.requires_grad(x.id)) {
          Mat dxhat = g.array().rowwise() * t.value(gamma.id).row(0).array();
          Eigen::VectorXd m1 = dxhat.rowwise().mean();
          Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Mat dx = dxhat.colwise() - m1;
          dx -= (xhat.array().colwise() * m2.array()).matrix();
          dx = dx.array().colwise() * inv_std.array();
          t.accumulate(x.id, dx);
        }
        (void)n;
      });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= a.rows(), "slice_rows");
  return a.tape->record(a.value().middleRows(start, count), any_grad(a),
                        [a, start, count](Tape& t, int id) {
                          Mat g = Mat::Zero(t.value(a.id).rows(), t.value(a.id).cols());
                          g.middleRows(start, count) = t.grad(id);
                          t.accumulate(a.id, g);
                        });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= a.cols(), "slice_cols");
  return a.tape->record(a.value().middleCols(start, count), any_grad(a),
                        [a, start, count](Tape& t, int id) {
                          Mat g = Mat::Zero(t.value(a.id).rows(), t.value(a.id).cols());
                          g.middleCols(start, count) = t.grad(id);
                          t.accumulate(a.id, g);
                        });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  bool rg = false;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows");
    rows += p.rows();
    rg = rg || any_grad(p);
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), rg, [ins](Tape& t, int id) {
    Eigen::Index r0 = 0;
    for (const Var& p : ins) {
      const Eigen::Index n = t.value(p.id).rows();
      if (t.requires_grad(p.id)) t.accumulate_expr(p.id, t.grad(id).middleRows(r0, n));
      r0 += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols");
    cols += p.cols();
    rg = rg || any_grad(p);
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), rg, [ins](Tape& t, int id) {
    Eigen::Index c0 = 0;
    for (const Var& p : ins) {
      const Eigen::Index n = t.value(p.id).cols();
      if (t.requires_grad(p.id)) t.accumulate_expr(p.id, t.grad(id).middleCols(c0, n));
      c0 += n;
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return a.tape->record(std::move(out), any_grad(a), [a, idx](Tape& t, int id) {
    Mat g = Mat::Zero(t.value(a.id).rows(), t.value(a.id).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += t.grad(id).row(static_cast<Eigen::Index>(i));
    t.accumulate(a.id, g);
  });
}

Var sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), any_grad(a), [a](Tape& t, int id) {
    const double g = t.grad(id)(0, 0);
    t.accumulate_expr(a.id, Mat::Constant(t.value(a.id).rows(), t.value(a.id).cols(), g));
  });
}

Var dropout(Var a, double rate) {
  Tape& tape = *a.tape;
  if (!tape.training || tape.rng == nullptr || rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  Mat mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*tape.rng) ? s : 0.0;
  Mat out = a.value().cwiseProduct(mask);
  return tape.record(std::move(out), any_grad(a), [a, mask = std::move(mask)](Tape& t, int id) {
    t.accumulate_expr(a.id, t.grad(id).cwiseProduct(mask));
  });
}

Var fourier(Var a, std::span<const double> freqs) {
  const Eigen::Index k = static_cast<Eigen::Index>(freqs.size());
  const Eigen::Index d = a.cols();
  Mat out(a.rows(), 2 * k * d);
  const Mat& x = a.value();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index b = 0; b < k; ++b) {
        const double arg = freqs[b] * kPi * x(r, i);
        out(r, (i * k + b) * 2) = std::sin(arg);
        out(r, (i * k + b) * 2 + 1) = std::cos(arg);
      }
    }
  }
  std::vector<double> f(freqs.begin(), freqs.end());
  return a.tape->record(std::move(out), any_grad(a), [a, f, k, d](Tape& t, int id) {
    const Mat& y = t.value(id);
    const Mat& g = t.grad(id);
    Mat dx = Mat::Zero(y.rows(), d);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      for (Eigen::Index i = 0; i < d; ++i) {
        double acc = 0.0;
        for (Eigen::Index b = 0; b < k; ++b) {
          const Eigen::Index c = (i * k + b) * 2;
          const double w = f[b] * kPi;
          acc += w * (g(r, c) * y(r, c + 1) - g(r, c + 1) * y(r, c));
        }
        dx(r, i) = acc;
      }
    }
    t.accumulate(a.id, dx);
  });
}

Var conv2d(Var x, Var weight, Var bias, const ConvShape& s) {
  const int k = s.kernel;
  const int ho = s.out_height(), wo = s.out_width();
  const int c_in = s.in_channels;
  require(x.rows() == c_in && x.cols() == static_cast<Eigen::Index>(s.batch) * s.height * s.width,
          "conv2d input");
  require(weight.cols() == c_in * k * k && bias.rows() == weight.rows() && bias.cols() == 1,
          "conv2d weight");
  const Eigen::Index out_cols = static_cast<Eigen::Index>(s.batch) * ho * wo;
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(c_in) * k * k, out_cols);
  const Mat& xv = x.value();
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int n = 0; n < s.batch; ++n) {
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * s.stride - s.padding + ky;
            if (iy < 0 || iy >= s.height) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * s.stride - s.padding + kx;
              if (ix < 0 || ix >= s.width) continue;
              cols(row, (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox) =
                  xv(c, (static_cast<Eigen::Index>(n) * s.height + iy) * s.width + ix);
            }
          }
        }
      }
    }
  }
  Mat out = weight.value() * cols;
  out.colwise() += bias.value().col(0);
  const bool rg = any_grad(x) || any_grad(weight) || any_grad(bias);
  return x.tape->record(std::move(out), rg, [x, weight, bias, s, cols = std::move(cols)](Tape& t, int id) {
    const Mat& g = t.grad(id);
    if (t.requires_grad(weight.id)) t.accumulate_expr(weight.id, g * cols.transpose());
    if (t.requires_grad(bias.id)) t.accumulate_expr(bias.id, g.rowwise().sum());
    if (!t.requires_grad(x.id)) return;
    const Mat dcols = t.value(weight.id).transpose() * g;
    const int k = s.kernel, ho = s.out_height(), wo = s.out_width();
    Mat dx = Mat::Zero(s.in_channels, static_cast<Eigen::Index>(s.batch) * s.height * s.width);
    for (int c = 0; c < s.in_channels; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
          for (int n = 0; n < s.batch; ++n) {
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * s.stride - s.padding + ky;
              if (iy < 0 || iy >= s.height) continue;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * s.stride - s.padding + kx;
                if (ix < 0 || ix >= s.width) continue;
                dx(c, (static_cast<Eigen::Index>(n) * s.height + iy) * s.width + ix) +=
                    dcols(row, (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox);
              }
            }
          }
        }
      }
    }
    t.accumulate(x.id, dx);
  });
}

Var sigmoid_focal_loss(Var logits, const Mat& targets, double alpha, double gamma) {
  require(targets.rows() == logits.rows() && targets.cols() == logits.cols(), "focal targets");
  const Mat& x = logits.value();
  Mat dx(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = x.data()[i];
    const bool pos = targets.data()[i] > 0.5;
    // For a negative target the loss is the positive-target loss of -z with alpha -> 1 - alpha.
    const double zs = pos ? z : -z;
    const double a = pos ? alpha : 1.0 - alpha;
    const double p = 1.0 / (1.0 + std::exp(-zs));
    const double one_minus = 1.0 - p;
    const double logp = log_sigmoid(zs);
    const double mod = std::pow(one_minus, gamma);
    total += -a * mod * logp;
    const double d = a * mod * (gamma * p * logp - one_minus);
    dx.data()[i] = pos ? d : -d;
  }
  Mat out(1, 1);
  out(0, 0) = total;
  return logits.tape->record(std::move(out), any_grad(logits),
                             [logits, dx = std::move(dx)](Tape& t, int id) {
                               t.accumulate_expr(logits.id, dx * t.grad(id)(0, 0));
                             });
}

Var weighted_l1(Var a, const Mat& target, std::span<const double> row_weights) {
  require(target.rows() == a.rows() && target.cols() == a.cols() &&
              static_cast<Eigen::Index>(row_weights.size()) == a.rows(),
          "weighted_l1");
  Eigen::VectorXd w(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) w[r] = row_weights[static_cast<std::size_t>(r)];
  const Mat diff = a.value() - target;
  Mat out(1, 1);
  out(0, 0) = (diff.cwiseAbs().rowwise().sum().array() * w.array()).sum();
  Mat sign = diff.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
  sign = sign.array().colwise() * w.array();
  return a.tape->record(std::move(out), any_grad(a), [a, sign = std::move(sign)](Tape& t, int id) {
    t.accumulate_expr(a.id, sign * t.grad(id)(0, 0));
  });
}

}  // namespace vedet::ag
