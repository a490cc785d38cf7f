#include "cstt/transducer.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cstt::transducer {

namespace {

double LogAdd(double a, double b) {
  if (a <= kLogZero) return b;
  if (b <= kLogZero) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

// Row-wise log-softmax; -inf logits map to kLogZero.
Matrix LogSoftmaxRows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    // NaN propagates so callers see a non-finite loss.
    if (logits.row(r).hasNaN()) {
      out.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      mx = std::max(mx, logits(r, v));
    }
    if (!std::isfinite(mx)) {
      throw std::invalid_argument("lattice row " + std::to_string(r) +
                                  " has no finite logit");
    }
    double z = 0.0;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      z += std::exp(logits(r, v) - mx);
    }
    const double lz = mx + std::log(z);
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      double lp = logits(r, v) - lz;
      out(r, v) = std::isfinite(lp) ? std::max(lp, kLogZero) : kLogZero;
    }
  }
  return out;
}

void Validate(const LogitLattice& lattice, std::span<const int> target) {
  if (lattice.frames() < 1) {
    throw std::invalid_argument("transducer loss: lattice has no frames");
  }
  if (lattice.vocab() < 2) {
    throw std::invalid_argument("transducer loss: vocabulary must be >= 2");
  }
  if (static_cast<int>(target.size()) != lattice.target_length()) {
    throw std::invalid_argument(
        "transducer loss: target length " + std::to_string(target.size()) +
        " != lattice U " + std::to_string(lattice.target_length()));
  }
  if (lattice.values.rows() !=
      static_cast<Eigen::Index>(lattice.frames()) *
          (lattice.target_length() + 1)) {
    throw std::invalid_argument("transducer loss: lattice row count mismatch");
  }
  for (int y : target) {
    if (y == lattice.blank_id) {
      throw std::invalid_argument("transducer loss: target contains blank");
    }
    if (y < 0 || y >= lattice.vocab()) {
      throw std::invalid_argument("transducer loss: target id " +
                                  std::to_string(y) + " out of vocabulary");
    }
  }
}

}  // namespace

LogitLattice::LogitLattice(int frames, int target_length, int vocab, int blank)
    : values(Matrix::Zero(static_cast<Eigen::Index>(frames) *
                              (target_length + 1),
                          vocab)),
      blank_id(blank),
      frames_(frames),
      target_length_(target_length) {}

LossResult TransducerLoss(const LogitLattice& lattice,
                          std::span<const int> target) {
  Validate(lattice, target);
  const int T = lattice.frames();
  const int U = lattice.target_length();
  const int blank = lattice.blank_id;
  const Matrix lp = LogSoftmaxRows(lattice.values);
  auto blank_lp = [&](int t, int u) { return lp(lattice.row(t, u), blank); };
  auto label_lp = [&](int t, int u) {
    return lp(lattice.row(t, u), target[u]);
  };

  Matrix alpha = Matrix::Constant(T, U + 1, kLogZero);
  alpha(0, 0) = 0.0;
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kLogZero;
      if (t > 0) a = LogAdd(a, alpha(t - 1, u) + blank_lp(t - 1, u));
      if (u > 0) a = LogAdd(a, alpha(t, u - 1) + label_lp(t, u - 1));
      alpha(t, u) = std::max(a, kLogZero);
    }
  }

  Matrix beta = Matrix::Constant(T, U + 1, kLogZero);
  beta(T - 1, U) = blank_lp(T - 1, U);
  for (int t = T - 1; t >= 0; --t) {
    for (int u = U; u >= 0; --u) {
      if (t == T - 1 && u == U) continue;
      double b = kLogZero;
      if (t < T - 1) b = LogAdd(b, beta(t + 1, u) + blank_lp(t, u));
      if (u < U) b = LogAdd(b, beta(t, u + 1) + label_lp(t, u));
      beta(t, u) = std::max(b, kLogZero);
    }
  }

  const double log_like = alpha(T - 1, U) + blank_lp(T - 1, U);
  LossResult result;
  result.grad = Matrix::Zero(lattice.values.rows(), lattice.values.cols());
  if (log_like <= kLogZero / 2) {
    result.nll = kInfiniteNll;
    return result;
  }
  result.nll = -log_like;

  // d nll / d logp(k | t,u) = -occupancy of that transition; then through the
  // softmax: d/dz_v = g_v - p_v * sum_w g_w.
  for (int t = 0; t < T; ++t) {
    for (int u = 0; u <= U; ++u) {
      const int r = lattice.row(t, u);
      if (alpha(t, u) <= kLogZero) continue;
      double g_blank = 0.0;
      if (t < T - 1) {
        g_blank = -std::exp(alpha(t, u) + blank_lp(t, u) + beta(t + 1, u) -
                            log_like);
      } else if (u == U) {
        g_blank = -std::exp(alpha(t, u) + blank_lp(t, u) - log_like);
      }
      double g_label = 0.0;
      if (u < U) {
        g_label = -std::exp(alpha(t, u) + label_lp(t, u) + beta(t, u + 1) -
                            log_like);
      }
      const double g_sum = g_blank + g_label;
      for (int v = 0; v < lattice.vocab(); ++v) {
        result.grad(r, v) = -std::exp(lp(r, v)) * g_sum;
      }
      result.grad(r, blank) += g_blank;
      if (u < U) result.grad(r, target[u]) += g_label;
    }
  }
  return result;
}

double TransducerLossOracle(const LogitLattice& lattice,
                            std::span<const int> target) {
  Validate(lattice, target);
  const int T = lattice.frames();
  const int U = lattice.target_length();
  if (T > 6 || U > 4) {
    throw std::invalid_argument(
        "transducer oracle: instance too large for enumeration (T <= 6, "
        "U <= 4)");
  }
  const Matrix lp = LogSoftmaxRows(lattice.values);
  // A path is a sequence of T + U moves; exactly U of them are labels, and
  // the final move is the blank leaving frame T - 1. Enumerate label
  // placements among the first T + U - 1 moves.
  const int moves = T + U;
  double total = 0.0;
  for (unsigned mask = 0; mask < (1u << (moves - 1)); ++mask) {
    if (std::popcount(mask) != U) continue;
    int t = 0;
    int u = 0;
    double logp = 0.0;
    bool dead = false;
    for (int m = 0; m < moves; ++m) {
      const bool label = m < moves - 1 && ((mask >> m) & 1u);
      const double step = lp(lattice.row(t, u),
                             label ? target[u] : lattice.blank_id);
      if (step <= kLogZero) dead = true;
      logp += step;
      if (label) {
        ++u;
      } else {
        ++t;
      }
    }
    if (!dead) total += std::exp(logp);
  }
  if (total <= 0.0) return kInfiniteNll;
  return -std::log(total);
}

ag::Var TransducerLoss(ag::Var logits, int frames, std::span<const int> target,
                       int blank_id) {
  LogitLattice lattice(frames, static_cast<int>(target.size()),
                       static_cast<int>(logits.cols()), blank_id);
  if (logits.rows() != lattice.values.rows()) {
    throw std::invalid_argument("transducer loss: logits rows " +
                                std::to_string(logits.rows()) + " != T*(U+1) " +
                                std::to_string(lattice.values.rows()));
  }
  lattice.values = logits.value();
  LossResult res = TransducerLoss(lattice, target);
  Matrix out(1, 1);
  out(0, 0) = res.nll;
  return logits.tape()->Record(
      std::move(out), {logits},
      [logits, grad = std::move(res.grad)](ag::Tape& t, int self) {
        t.Accumulate(logits, grad * t.grad(self)(0, 0));
      });
}

std::vector<int> GreedyDecode(const Matrix& encoder_states,
                              const PredictorFn& predictor,
                              const JoinerFn& joiner, int blank_id,
                              int max_symbols_per_frame) {
  if (max_symbols_per_frame < 1) {
    throw std::invalid_argument("max_symbols_per_frame must be >= 1");
  }
  std::vector<int> hyp;
  RowVector pred = predictor(hyp);
  for (Eigen::Index t = 0; t < encoder_states.rows(); ++t) {
    const RowVector frame = encoder_states.row(t);
    for (int emitted = 0; emitted < max_symbols_per_frame; ++emitted) {
      const RowVector logits = joiner(frame, pred);
      Eigen::Index best = 0;
      for (Eigen::Index v = 1; v < logits.size(); ++v) {
        if (logits(v) > logits(best)) best = v;
      }
      if (best == blank_id) break;
      hyp.push_back(static_cast<int>(best));
      pred = predictor(hyp);
    }
  }
  return hyp;
}

}  // namespace cstt::transducer
