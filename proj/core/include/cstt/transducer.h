#ifndef CSTT_TRANSDUCER_H_
#define CSTT_TRANSDUCER_H_

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "cstt/autograd.h"

namespace cstt::transducer {

using ag::Matrix;
using ag::RowVector;

// Log-probabilities at or below this are treated as log(0).
inline constexpr double kLogZero = -1e30;
// nll reported when no alignment has non-zero probability.
inline constexpr double kInfiniteNll = std::numeric_limits<double>::infinity();

// Joint-network output over the (frame, target-prefix) grid. Row
// t * (U + 1) + u of `values` holds the V pre-softmax logits of cell (t, u).
struct LogitLattice {
  LogitLattice() = default;
  LogitLattice(int frames, int target_length, int vocab, int blank = 0);

  int frames() const { return frames_; }
  int target_length() const { return target_length_; }
  int vocab() const { return static_cast<int>(values.cols()); }
  int row(int t, int u) const { return t * (target_length_ + 1) + u; }

  Matrix values;
  int blank_id = 0;

 private:
  int frames_ = 0;
  int target_length_ = 0;
};

struct LossResult {
  double nll = 0.0;
  // d nll / d logits, same layout as LogitLattice::values.
  Matrix grad;
};

// Negative log-likelihood of `target` summed over all monotonic alignments,
// computed with forward/backward recursions in log space.
// Throws std::invalid_argument on blank in target or inconsistent shapes.
LossResult TransducerLoss(const LogitLattice& lattice,
                          std::span<const int> target);

// Same quantity by explicit enumeration of every alignment path. Only for
// frames <= 6 and target length <= 4; larger instances are rejected.
double TransducerLossOracle(const LogitLattice& lattice,
                            std::span<const int> target);

// Autograd node wrapping TransducerLoss. `logits` has
// frames * (target.size() + 1) rows.
ag::Var TransducerLoss(ag::Var logits, int frames, std::span<const int> target,
                       int blank_id);

// Prediction-network output for a token prefix (no blank in the prefix).
using PredictorFn = std::function<RowVector(std::span<const int> prefix)>;
// Joint logits over the vocabulary for one encoder frame and one predictor
// output.
using JoinerFn =
    std::function<RowVector(const RowVector& encoder_frame,
                            const RowVector& predictor_out)>;

// Frame-synchronous greedy search. Emits at most max_symbols_per_frame
// labels per frame; ties in argmax go to the lowest index.
std::vector<int> GreedyDecode(const Matrix& encoder_states,
                              const PredictorFn& predictor,
                              const JoinerFn& joiner, int blank_id,
                              int max_symbols_per_frame = 3);

}  // namespace cstt::transducer

#endif  // CSTT_TRANSDUCER_H_
