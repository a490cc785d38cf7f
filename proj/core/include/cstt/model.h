#ifndef CSTT_MODEL_H_
#define CSTT_MODEL_H_

// Dual-path transducer network. The speech path is
//   features -> speech encoder -> E_s
// and the text path is
//   phonemes -> embedding extractor -> Emb_t -> resample by durations
//            -> smoother -> E_t.
// Either representation feeds the same shared encoder, prediction network
// and joint network. Only the speech path is used at inference.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cstt/autograd.h"
#include "cstt/config.h"

namespace cstt::model {

using ag::Matrix;
using ag::Parameter;
using ag::Var;

struct ModelConfig {
  // Speech feature width. The synthetic corpus uses input_dim == dim.
  int input_dim = 64;
  int dim = 64;
  int heads = 4;
  int ff_dim = 256;
  int joint_dim = 64;
  int layers_speech = 2;
  int layers_shared = 2;
  int layers_extractor = 2;
  int layers_smoother = 2;
  int layers_predictor = 2;
  double dropout = 0.1;
  // Output vocabulary including blank.
  int vocab_size = 0;
  int phoneme_count = 0;
  int blank_id = 0;

  // dim 64, 4 heads, two layers per stack.
  static ModelConfig Toy(int vocab_size, int phoneme_count);
  // dim 512, 8 heads, 6/12/4/2/2 layers.
  static ModelConfig PaperScale(int vocab_size, int phoneme_count);

  // Throws std::invalid_argument on violated invariants.
  void Validate() const;

  // Reads keys under `section` (e.g. "model.dim"), defaulting to *this.
  ModelConfig WithOverrides(const config::Tree& tree,
                            const std::string& section = "model") const;
  void WriteTo(config::Tree& tree, const std::string& section = "model") const;

  bool operator==(const ModelConfig&) const = default;
};

enum class Modality { kSpeech, kText };

struct SpeechSequence {
  Matrix features;  // (T_s x input_dim)
  int length() const { return static_cast<int>(features.rows()); }
};

struct PhonemeSequence {
  std::vector<int> ids;
  std::vector<int> durations;  // frames per phoneme, each >= 1
  int total_frames() const;
};

struct Representation {
  Var matrix;
  Modality modality = Modality::kSpeech;
};

// Per-call state. A null dropout_rng means evaluation mode.
struct ForwardContext {
  ag::Tape& tape;
  std::mt19937_64* dropout_rng = nullptr;

  bool training() const { return dropout_rng != nullptr; }
};

// Fixed sinusoidal position table (length x dim).
Matrix SinusoidalPositions(int length, int dim);

// Row i of `emb` repeated durations[i] times. If expected_frames is given the
// upsampled length must equal it.
Var Resample(Var emb, std::span<const int> durations,
             std::optional<int> expected_frames = std::nullopt);

class TransducerModel {
 public:
  // Parameter names are prefixed with one of these.
  static constexpr const char* kSpeechEncoder = "speech_encoder.";
  static constexpr const char* kExtractor = "extractor.";
  static constexpr const char* kSmoother = "smoother.";
  static constexpr const char* kSharedEncoder = "shared_encoder.";
  static constexpr const char* kPredictor = "predictor.";
  static constexpr const char* kJoiner = "joiner.";

  TransducerModel(const ModelConfig& config, std::uint64_t init_seed);
  TransducerModel(const TransducerModel&) = delete;
  TransducerModel& operator=(const TransducerModel&) = delete;

  const ModelConfig& config() const { return config_; }

  Representation SpeechEncode(ForwardContext& ctx,
                              const SpeechSequence& speech);
  Representation ExtractTextEmbedding(ForwardContext& ctx,
                                      const PhonemeSequence& phonemes);
  Representation Smooth(ForwardContext& ctx, Var upsampled);
  // Extract -> Resample -> Smooth. With expected_frames set, the
  // durations must sum to it.
  Representation TextEncode(ForwardContext& ctx,
                            const PhonemeSequence& phonemes,
                            std::optional<int> expected_frames = std::nullopt);
  // Same parameters whatever the modality tag.
  Var SharedEncode(ForwardContext& ctx, const Representation& rep);
  // Causal prediction network over [blank, prefix...]: (|prefix|+1) x dim.
  Var Predict(ForwardContext& ctx, std::span<const int> prefix);
  // Joint logits, (T * P) x vocab for T encoder rows and P predictor rows.
  Var Join(ForwardContext& ctx, Var encoder_out, Var predictor_out);
  Var PredictAndJoin(ForwardContext& ctx, Var encoder_out,
                     std::span<const int> target);

  // Greedy transducer decoding of one utterance through the speech path.
  // Every parameter read is added to `touched` when given.
  std::vector<int> Decode(const SpeechSequence& speech,
                          int max_symbols_per_frame = 3,
                          std::set<const Parameter*>* touched = nullptr);

  std::vector<Parameter*> Parameters();
  std::vector<Parameter*> ParametersWithPrefix(const std::string& prefix);
  Parameter* FindParameter(const std::string& name);
  std::size_t ParameterCount() const;
  void ZeroGrad();

 private:
  struct Linear {
    Parameter* weight = nullptr;  // (in x out)
    Parameter* bias = nullptr;    // (1 x out), may be null
  };
  struct Norm {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;
  };
  struct Layer {
    Norm attn_norm;
    Linear wq, wk, wv, wo;
    Norm ff_norm;
    Linear ff1, ff2;
  };
  struct Stack {
    std::vector<Layer> layers;
    Norm final_norm;
    bool causal = false;
    // Adds sinusoidal positions at the input.
    bool positions = true;
  };

  Parameter* NewParameter(const std::string& name, Matrix value);
  Linear NewLinear(const std::string& name, int in, int out, bool bias = true);
  Norm NewNorm(const std::string& name, int dim);
  Stack NewStack(const std::string& name, int layers, bool causal);

  Var Apply(ForwardContext& ctx, const Linear& lin, Var x);
  Var Apply(ForwardContext& ctx, const Norm& norm, Var x);
  Var Apply(ForwardContext& ctx, const Layer& layer, Var x, bool causal);
  Var Apply(ForwardContext& ctx, const Stack& stack, Var x);

  ModelConfig config_;
  std::mt19937_64 init_rng_;
  std::vector<std::unique_ptr<Parameter>> params_;

  Linear speech_input_;
  Stack speech_encoder_;
  Parameter* phoneme_embedding_ = nullptr;
  Stack extractor_;
  Stack smoother_;
  Stack shared_encoder_;
  Parameter* token_embedding_ = nullptr;
  Stack predictor_;
  Linear join_encoder_;
  Linear join_predictor_;
  Linear join_output_;
};

// Single-file archive: config record followed by named float64 arrays.
void SaveCheckpoint(TransducerModel& model, const std::string& path);
std::unique_ptr<TransducerModel> LoadCheckpoint(const std::string& path);

}  // namespace cstt::model

#endif  // CSTT_MODEL_H_
