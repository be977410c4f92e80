#pragma once

#include <functional>
#include <random>
#include <vector>

#include "vedet/autograd.hpp"

namespace gradcheck {

using vedet::ag::Mat;
using vedet::ag::Parameter;
using vedet::ag::Tape;
using vedet::ag::Var;

/// Builds a scalar from parameter Vars on a fresh tape.
using Fn = std::function<Var(Tape&, std::vector<Var>&)>;

inline double eval(const Fn& f, std::vector<Parameter>& params) {
  Tape tape;
  std::vector<Var> vars;
  for (Parameter& p : params) vars.push_back(tape.param(p));
  return f(tape, vars).scalar();
}

/// Largest relative error between the analytic gradient and central
/// differences over every entry of every parameter.
inline double max_rel_error(const Fn& f, std::vector<Parameter>& params, double h = 1e-5) {
  for (Parameter& p : params) p.zero_grad();
  {
    Tape tape;
    std::vector<Var> vars;
    for (Parameter& p : params) vars.push_back(tape.param(p));
    tape.backward(f(tape, vars));
  }
  double worst = 0.0;
  for (Parameter& p : params) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = eval(f, params);
      p.value.data()[i] = keep - h;
      const double down = eval(f, params);
      p.value.data()[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = p.grad.data()[i];
      const double err = std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an)));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline Mat random(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Random linear functional so that every output entry contributes.
inline Var project(Tape& tape, Var x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return vedet::ag::sum(vedet::ag::mul(x, tape.constant(random(rng, x.rows(), x.cols()))));
}

}  // namespace gradcheck
