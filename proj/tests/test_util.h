#ifndef CSTT_TESTS_TEST_UTIL_H_
#define CSTT_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "cstt/autograd.h"

namespace cstt::testing {

using ag::Matrix;

inline Matrix RandomMatrix(int rows, int cols, std::uint64_t seed,
                           double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Scalar function of one matrix input, built on a tape.
using ScalarFn = std::function<ag::Var(ag::Tape&, ag::Var)>;

inline double Evaluate(const ScalarFn& fn, const Matrix& x) {
  ag::Tape tape;
  return fn(tape, tape.Constant(x)).scalar();
}

inline Matrix Gradient(const ScalarFn& fn, const Matrix& x) {
  ag::Parameter p("x", x);
  ag::Tape tape;
  tape.Backward(fn(tape, tape.Param(p)));
  return p.grad;
}

inline Matrix CentralDifference(const ScalarFn& fn, const Matrix& x,
                                double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = Evaluate(fn, probe);
    probe.data()[i] = orig - h;
    const double down = Evaluate(fn, probe);
    probe.data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double MaxRelError(const Matrix& a, const Matrix& b,
                          double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

inline double GradCheck(const ScalarFn& fn, const Matrix& x,
                        double h = 1e-5) {
  return MaxRelError(Gradient(fn, x), CentralDifference(fn, x, h));
}

}  // namespace cstt::testing

#endif  // CSTT_TESTS_TEST_UTIL_H_
