#include "cstt/xmodal.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cstt::xmodal {

namespace {

void RequireSameShape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": E_t is " +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + ", E_s is " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

// One InfoNCE direction given sims(j, i) = cos(x_j, y_i). Column i's
// positive is row i + k; every row of the column is a candidate.
Var InfoNceColumns(Var sims, int k, double tau, bool literal) {
  const Matrix& s = sims.value();
  const Eigen::Index n = s.rows();
  const Eigen::Index valid = n - k;
  if (valid < 1) {
    throw std::invalid_argument("BiInfoNCE: offset_k leaves no positives");
  }
  Matrix dsims = Matrix::Zero(n, n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < valid; ++i) {
    const Eigen::Index pos = i + k;
    if (literal) {
      double denom = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (s(j, i) < 0.0) {
          throw std::domain_error(
              "BiInfoNCE (literal form): negative cosine similarity at (" +
              std::to_string(j) + ", " + std::to_string(i) + ")");
        }
        denom += s(j, i);
      }
      if (s(pos, i) <= 0.0) {
        throw std::domain_error(
            "BiInfoNCE (literal form): zero positive similarity at frame " +
            std::to_string(i));
      }
      loss += -std::log(s(pos, i) / denom);
      dsims.col(i).setConstant(1.0 / denom);
      dsims(pos, i) -= 1.0 / s(pos, i);
    } else {
      const double mx = s.col(i).maxCoeff() / tau;
      double z = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) z += std::exp(s(j, i) / tau - mx);
      const double lse = mx + std::log(z);
      loss += lse - s(pos, i) / tau;
      for (Eigen::Index j = 0; j < n; ++j) {
        dsims(j, i) = std::exp(s(j, i) / tau - lse) / tau;
      }
      dsims(pos, i) -= 1.0 / tau;
    }
  }
  const double inv = 1.0 / static_cast<double>(valid);
  Matrix out(1, 1);
  out(0, 0) = loss * inv;
  dsims *= inv;
  return sims.tape()->Record(std::move(out), {sims},
                             [sims, dsims](ag::Tape& t, int self) {
                               t.Accumulate(sims, dsims * t.grad(self)(0, 0));
                             });
}

}  // namespace

Mode ParseMode(const std::string& name) {
  if (name == "none") return Mode::kNone;
  if (name == "mse") return Mode::kMse;
  if (name == "biinfonce") return Mode::kBiInfoNce;
  if (name == "swap") return Mode::kSwap;
  throw std::invalid_argument("unknown xmodal mode '" + name +
                              "' (expected none|mse|biinfonce|swap)");
}

const char* ModeName(Mode mode) {
  switch (mode) {
    case Mode::kNone:
      return "none";
    case Mode::kMse:
      return "mse";
    case Mode::kBiInfoNce:
      return "biinfonce";
    case Mode::kSwap:
      return "swap";
  }
  return "none";
}

void XModalConfig::Validate() const {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("xmodal.temperature must be > 0");
  }
  if (!(swap_rate >= 0.0 && swap_rate <= 1.0)) {
    throw std::invalid_argument("xmodal.swap_rate must lie in [0, 1]");
  }
  if (offset_k < 0) throw std::invalid_argument("xmodal.offset_k must be >= 0");
}

XModalConfig XModalConfig::WithOverrides(const config::Tree& tree,
                                         const std::string& section) const {
  XModalConfig c = *this;
  if (auto m = tree.get_optional<std::string>(section + ".mode")) {
    c.mode = ParseMode(*m);
  }
  c.temperature = tree.get(section + ".temperature", c.temperature);
  c.swap_rate = tree.get(section + ".swap_rate", c.swap_rate);
  c.offset_k = tree.get(section + ".offset_k", c.offset_k);
  c.rng_seed = tree.get(section + ".seed", c.rng_seed);
  c.strict_literal = tree.get(section + ".strict_literal", c.strict_literal);
  if (auto s = tree.get_optional<std::string>(section + ".swap_kind")) {
    if (*s == "exchange") {
      c.swap_kind = SwapKind::kExchange;
    } else if (*s == "text_into_speech") {
      c.swap_kind = SwapKind::kTextIntoSpeech;
    } else {
      throw std::invalid_argument("unknown xmodal.swap_kind '" + *s + "'");
    }
  }
  c.Validate();
  return c;
}

void XModalConfig::WriteTo(config::Tree& tree,
                           const std::string& section) const {
  tree.put(section + ".mode", ModeName(mode));
  tree.put(section + ".temperature", temperature);
  tree.put(section + ".swap_rate", swap_rate);
  tree.put(section + ".offset_k", offset_k);
  tree.put(section + ".seed", rng_seed);
  tree.put(section + ".strict_literal", strict_literal);
  tree.put(section + ".swap_kind", swap_kind == SwapKind::kExchange
                                       ? "exchange"
                                       : "text_into_speech");
}

Var MseLoss(Var e_t, Var e_s) {
  RequireSameShape(e_t.value(), e_s.value(), "mse_loss");
  return ag::MeanSquaredError(e_t, e_s);
}

double MseLoss(const Matrix& e_t, const Matrix& e_s) {
  RequireSameShape(e_t, e_s, "mse_loss");
  return (e_t - e_s).squaredNorm() / static_cast<double>(e_t.size());
}

InfoNceResult BiInfoNceLoss(Var e_t, Var e_s, const XModalConfig& cfg) {
  RequireSameShape(e_t.value(), e_s.value(), "bi_infonce_loss");
  if (e_t.rows() < 2) {
    throw std::invalid_argument("bi_infonce_loss: need L >= 2 frames, got " +
                                std::to_string(e_t.rows()));
  }
  cfg.Validate();
  InfoNceResult result;
  Var tn = ag::NormalizeRows(e_t, &result.degenerate);
  Var sn = ag::NormalizeRows(e_s, &result.degenerate);
  // sims_ts(j, i) = cos(t_j, s_i): L_N(E_t, E_s); the transpose gives the
  // other direction.
  Var t_to_s = InfoNceColumns(ag::MatMulBT(tn, sn), cfg.offset_k,
                              cfg.temperature, cfg.strict_literal);
  Var s_to_t = InfoNceColumns(ag::MatMulBT(sn, tn), cfg.offset_k,
                              cfg.temperature, cfg.strict_literal);
  result.loss = ag::Add(t_to_s, s_to_t);
  return result;
}

double BiInfoNceLoss(const Matrix& e_t, const Matrix& e_s,
                     const XModalConfig& cfg, bool* degenerate) {
  ag::Tape tape;
  InfoNceResult r =
      BiInfoNceLoss(tape.Constant(e_t), tape.Constant(e_s), cfg);
  if (degenerate != nullptr) *degenerate = r.degenerate;
  return r.loss.scalar();
}

std::vector<int> SwapFrames(int length, const XModalConfig& cfg,
                            std::uint64_t draw) {
  const int count = static_cast<int>(std::lround(cfg.swap_rate * length));
  std::vector<int> frames(length);
  std::iota(frames.begin(), frames.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.rng_seed),
                    static_cast<std::uint32_t>(cfg.rng_seed >> 32),
                    static_cast<std::uint32_t>(draw),
                    static_cast<std::uint32_t>(draw >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(frames.begin(), frames.end(), rng);
  frames.resize(count);
  std::sort(frames.begin(), frames.end());
  return frames;
}

SwapResult ModalitySwap(Var e_t, Var e_s, const XModalConfig& cfg,
                        std::uint64_t draw) {
  RequireSameShape(e_t.value(), e_s.value(), "modality_swap");
  SwapResult r;
  r.frames = SwapFrames(static_cast<int>(e_t.rows()), cfg, draw);
  std::vector<bool> mask(e_t.rows(), false);
  for (int f : r.frames) mask[f] = true;
  if (r.frames.empty()) {
    r.e_t = e_t;
    r.e_s = e_s;
    return r;
  }
  r.e_s = ag::MixRows(e_s, e_t, mask);
  r.e_t = cfg.swap_kind == SwapKind::kExchange ? ag::MixRows(e_t, e_s, mask)
                                               : e_t;
  return r;
}

std::pair<Matrix, Matrix> ModalitySwap(const Matrix& e_t, const Matrix& e_s,
                                       const XModalConfig& cfg,
                                       std::uint64_t draw) {
  ag::Tape tape;
  SwapResult r =
      ModalitySwap(tape.Constant(e_t), tape.Constant(e_s), cfg, draw);
  return {r.e_t.value(), r.e_s.value()};
}

}  // namespace cstt::xmodal
