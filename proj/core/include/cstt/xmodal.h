#ifndef CSTT_XMODAL_H_
#define CSTT_XMODAL_H_

// Cross-modality tying between the text representation E_t and the speech
// representation E_s (both L x dim, frame-aligned): mean squared error,
// bidirectional InfoNCE over cosine similarities, and frame swapping.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cstt/autograd.h"
#include "cstt/config.h"

namespace cstt::xmodal {

using ag::Matrix;
using ag::Var;

enum class Mode { kNone, kMse, kBiInfoNce, kSwap };

Mode ParseMode(const std::string& name);
const char* ModeName(Mode mode);

enum class SwapKind {
  // E_t'[i] = E_s[i] and E_s'[i] = E_t[i] for swapped frames.
  kExchange,
  // Only E_s'[i] = E_t[i]; E_t is left untouched.
  kTextIntoSpeech,
};

struct XModalConfig {
  Mode mode = Mode::kMse;
  double temperature = 0.1;
  double swap_rate = 0.2;
  int offset_k = 0;
  std::uint64_t rng_seed = 0;
  // Literal ratio of raw cosines instead of a softmax over cos / temperature.
  // Negative similarities are rejected in this form.
  bool strict_literal = false;
  SwapKind swap_kind = SwapKind::kExchange;

  void Validate() const;
  XModalConfig WithOverrides(const config::Tree& tree,
                             const std::string& section = "xmodal") const;
  void WriteTo(config::Tree& tree, const std::string& section = "xmodal") const;
};

Var MseLoss(Var e_t, Var e_s);
double MseLoss(const Matrix& e_t, const Matrix& e_s);

struct InfoNceResult {
  Var loss;
  // Some row had zero norm and its cosines were taken as 0.
  bool degenerate = false;
};

// L_N(E_t, E_s) + L_N(E_s, E_t) where
//   L_N(X, Y) = -mean_i log( exp(cos(x_{i+k}, y_i)/tau)
//                            / sum_j exp(cos(x_j, y_i)/tau) )
// over the positions i with i + k < L. Requires L >= 2.
InfoNceResult BiInfoNceLoss(Var e_t, Var e_s, const XModalConfig& cfg);
double BiInfoNceLoss(const Matrix& e_t, const Matrix& e_s,
                     const XModalConfig& cfg, bool* degenerate = nullptr);

// round(swap_rate * length) distinct frame indices, sorted, drawn from a
// generator seeded by (cfg.rng_seed, draw).
std::vector<int> SwapFrames(int length, const XModalConfig& cfg,
                            std::uint64_t draw);

struct SwapResult {
  Var e_t;
  Var e_s;
  std::vector<int> frames;
};

SwapResult ModalitySwap(Var e_t, Var e_s, const XModalConfig& cfg,
                        std::uint64_t draw = 0);
std::pair<Matrix, Matrix> ModalitySwap(const Matrix& e_t, const Matrix& e_s,
                                       const XModalConfig& cfg,
                                       std::uint64_t draw = 0);

}  // namespace cstt::xmodal

#endif  // CSTT_XMODAL_H_
