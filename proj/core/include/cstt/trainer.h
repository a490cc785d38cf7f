#ifndef CSTT_TRAINER_H_
#define CSTT_TRAINER_H_

// Loss composition, composite batches and the optimisation loop for the
// three systems:
//   BASELINE  paired real speech, speech path only
//   TOPLINE   paired real speech mixed with simulated TTS, speech path only
//   CM        paired real speech through both paths plus text-only data
//             through the text path

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cstt/autograd.h"
#include "cstt/config.h"
#include "cstt/model.h"
#include "cstt/synthcorpus.h"
#include "cstt/xmodal.h"

namespace cstt::trainer {

using ag::Parameter;
using ag::Var;
using model::ForwardContext;
using model::TransducerModel;
using synth::TextOnlySample;
using synth::Utterance;

enum class System { kBaseline, kTopline, kCm };
System ParseSystem(const std::string& name);  // baseline|topline|cm
const char* SystemName(System system);

struct TrainConfig {
  double mu = 2.33;
  double peak_lr = 2e-4;
  int warmup_steps = 500;
  double decay_rate = 0.9999;
  int steps = 1000;
  std::uint64_t seed = 1;
  System system = System::kBaseline;

  int paired_batch = 8;
  int textonly_batch = 8;
  // Global gradient-norm threshold; 0 disables clipping.
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double weight_decay = 0.01;
  // TOPLINE: simulated-TTS utterances per real utterance in the paired
  // stream.
  int tts_per_real = 2;
  // Write a checkpoint every n steps (0: final checkpoint only).
  int checkpoint_every = 0;

  void Validate() const;
  TrainConfig WithOverrides(const config::Tree& tree,
                            const std::string& section = "train") const;
  void WriteTo(config::Tree& tree, const std::string& section = "train") const;
};

// Linear warmup from 0 to peak_lr over warmup_steps, then
// peak_lr * decay_rate^(step - warmup_steps).
double LrAt(long step, const TrainConfig& cfg);

struct CompositeBatch {
  std::vector<const Utterance*> paired;
  std::vector<const TextOnlySample*> text_only;

  // Throws std::invalid_argument when the batch does not suit `system`.
  void Validate(System system) const;
};

// Per-utterance transducer loss (negative log-likelihood, not divided by
// length) on the speech path.
Var SpeechLoss(ForwardContext& ctx, TransducerModel& model,
               const Utterance& utt);

struct PairedTerms {
  Var total;
  Var speech;                 // L_s
  Var text;                   // L_t
  std::optional<Var> cross;   // L_CM; absent in NONE and SWAP modes
};

// L_paired = mu * L_s + L_CM + L_t for one utterance. `draw` selects the
// swapped frames in SWAP mode.
PairedTerms PairedLoss(ForwardContext& ctx, TransducerModel& model,
                       const Utterance& utt, const xmodal::XModalConfig& xcfg,
                       double mu, std::uint64_t draw = 0);

// L_text: transducer loss through extractor, resample, smoother and the
// shared encoder. Never touches speech features.
Var TextOnlyLoss(ForwardContext& ctx, TransducerModel& model,
                 const TextOnlySample& sample);

// Loss values averaged over the samples they were computed on.
struct LossComponents {
  double speech = 0.0;     // L_s
  double text = 0.0;       // L_t on paired data
  double cross = 0.0;      // L_CM
  double paired = 0.0;     // L_paired (or mu-free L_s for speech-only systems)
  double text_only = 0.0;  // L_text
  double total = 0.0;      // paired + text_only
};

struct StepReport {
  long step = 0;
  double lr = 0.0;
  LossComponents loss;
  double grad_norm = 0.0;
  bool clipped = false;
  // Non-finite loss or gradient: no update was applied.
  bool aborted = false;
  std::string diagnostics;

  nlohmann::json ToJson() const;
};

// Dropout stream for one sample, pinned by (seed, step, sample id) so it
// does not depend on the sample's position in the batch.
std::uint64_t SampleSeed(std::uint64_t seed, long step, const std::string& id);

// Runs forward/backward for every sample in `batch` and adds
// weight * d(loss)/d(theta) into Parameter::grad. Paired samples use
// `paired_weight`, text-only samples `text_weight`. Losses in the returned
// components are weighted sums.
LossComponents AccumulateGradients(TransducerModel& model,
                                   const CompositeBatch& batch,
                                   const TrainConfig& cfg,
                                   const xmodal::XModalConfig& xcfg, long step,
                                   double paired_weight, double text_weight);

// Decoupled-weight-decay Adam.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-9;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<Parameter*> params, Options options);

  void Step(double lr);
  long steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  Options options_;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
  long t_ = 0;
};

// L2 norm over all gradients.
double GlobalGradNorm(std::span<Parameter* const> params);

// One composite step: zero grads, accumulate the paired mini-batch (mean
// over its samples) and the text-only mini-batch (mean), clip, update with
// LrAt(step).
StepReport TrainStep(TransducerModel& model, AdamW& optimizer,
                     const CompositeBatch& batch, const TrainConfig& cfg,
                     const xmodal::XModalConfig& xcfg, long step);

struct TrainingData {
  std::span<const Utterance> paired;
  std::span<const TextOnlySample> text_only;
  std::span<const Utterance> tts;
};

// Deterministic composite-batch source. Each stream is walked in a seeded
// shuffled order, reshuffled every epoch.
class BatchStream {
 public:
  BatchStream(const TrainingData& data, const TrainConfig& cfg);
  CompositeBatch Next();

 private:
  class Cycle {
   public:
    Cycle() = default;
    Cycle(std::size_t size, std::uint64_t seed);
    std::size_t Next();
    bool empty() const { return order_.empty(); }

   private:
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::uint64_t seed_ = 0;
    long epoch_ = 0;
  };

  TrainingData data_;
  TrainConfig cfg_;
  Cycle real_;
  Cycle tts_;
  Cycle text_;
  long paired_slots_ = 0;
};

struct TrainOptions {
  // Directory for train_log.jsonl and checkpoints; empty writes nothing.
  std::string out_dir;
  // Called after every step.
  std::function<void(const StepReport&)> on_step;
};

struct TrainResult {
  long steps = 0;
  long aborted_steps = 0;
  long clipped_steps = 0;
  LossComponents last_loss;
  std::string final_checkpoint;  // empty when out_dir is empty
};

TrainResult Train(TransducerModel& model, const TrainingData& data,
                  const TrainConfig& cfg, const xmodal::XModalConfig& xcfg,
                  const TrainOptions& options = {});

}  // namespace cstt::trainer

#endif  // CSTT_TRAINER_H_
