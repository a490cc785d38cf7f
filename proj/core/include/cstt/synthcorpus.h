#ifndef CSTT_SYNTHCORPUS_H_
#define CSTT_SYNTHCORPUS_H_

// Deterministic stand-ins for recorded speech, forced alignment and TTS.
//
// A synthetic language has single-character Mandarin words and English
// words, each spelled as a short phoneme sequence. An utterance is rendered
// by giving every phoneme a sampled duration and emitting a fixed prototype
// vector per frame plus Gaussian noise. The sampled durations double as the
// alignment for paired data and as the duration model for text-only data.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cstt/autograd.h"
#include "cstt/config.h"
#include "cstt/model.h"
#include "cstt/textgen.h"

namespace cstt::synth {

using ag::Matrix;
using ag::RowVector;

enum class Origin { kRealSim, kTtsSim };
const char* OriginName(Origin origin);
Origin ParseOrigin(const std::string& name);

// How a rendition sounds.
struct AcousticCondition {
  double noise_sigma = 0.5;
  // Added to every sampled duration (>= 0).
  int duration_offset = 0;
  // Multiplier on the language's artifact vector (0 for real speech).
  double artifact_scale = 0.0;
};

struct LanguageParams {
  std::uint64_t seed = 7;
  int feature_dim = 64;
  int mandarin_initials = 12;
  int mandarin_finals = 12;
  int english_phonemes = 6;
  // Duration means are drawn uniformly from [min, max].
  double duration_mean_min = 2.0;
  double duration_mean_max = 3.0;
  int duration_jitter = 1;
  double prototype_scale = 1.0;
  double artifact_norm = 2.0;
  AcousticCondition real{0.5, 0, 0.0};
  AcousticCondition tts{0.3, 0, 1.0};
  AcousticCondition shifted{0.8, 1, 0.0};

  static LanguageParams FromTree(const config::Tree& tree);
  void WriteTo(config::Tree& tree) const;
};

struct SyntheticLanguageSpec {
  LanguageParams params;
  int phoneme_count = 0;
  // ASR vocabulary; index 0 is the blank "<blk>".
  std::vector<std::string> token_vocab;
  std::unordered_map<std::string, int> token_ids;
  // token id -> phoneme ids (empty for blank).
  std::vector<std::vector<int>> lexicon;
  std::vector<double> duration_mean;  // per phoneme
  Matrix prototypes;                  // phoneme_count x feature_dim
  RowVector artifact;                 // norm == params.artifact_norm

  // Text side used to build parallel pairs.
  std::vector<textgen::TaggedWord> mandarin_words;
  std::vector<textgen::TaggedWord> english_words;
  textgen::BilingualLexicon dictionary;

  int vocab_size() const { return static_cast<int>(token_vocab.size()); }
  int TokenId(const std::string& token) const;  // throws on OOV
  std::vector<int> TokenIds(std::span<const std::string> tokens) const;
  std::vector<std::string> TokenStrings(std::span<const int> ids) const;
};

SyntheticLanguageSpec BuildLanguage(const LanguageParams& params);

// POS-tagged parallel pairs from sentence templates. Every pair carries at
// least two alignable content words (a verb and a noun).
std::vector<textgen::ParallelPair> GenerateParallelPairs(
    const SyntheticLanguageSpec& spec, int count, std::uint64_t seed);

struct Utterance {
  std::string id;
  Matrix features;  // T_s x feature_dim
  std::vector<std::string> tokens;
  std::vector<int> token_ids;
  model::PhonemeSequence phonemes;
  Origin origin = Origin::kRealSim;

  model::SpeechSequence speech() const { return {features}; }
};

struct TextOnlySample {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<int> token_ids;
  model::PhonemeSequence phonemes;
};

// Phonemes by lexicon lookup and durations sampled from `seed`; throws
// std::invalid_argument on an out-of-vocabulary token.
model::PhonemeSequence Pronounce(std::span<const std::string> tokens,
                                 const SyntheticLanguageSpec& spec,
                                 int duration_offset, std::uint64_t seed);

// Renders tokens under the language's real-speech condition.
Utterance SynthUtterance(std::span<const std::string> tokens,
                         const SyntheticLanguageSpec& spec, std::uint64_t seed);
Utterance SynthUtterance(std::span<const std::string> tokens,
                         const SyntheticLanguageSpec& spec,
                         const AcousticCondition& condition, std::uint64_t seed,
                         Origin origin = Origin::kRealSim);
// Renders a generated sentence under the TTS condition.
Utterance SimulateTts(const textgen::CSSentence& sentence,
                      const SyntheticLanguageSpec& spec, std::uint64_t seed);

struct DatasetSizes {
  int train_paired = 100;
  int train_textonly = 200;
  int train_tts = 50;
  int eval_homogeneous = 30;
  int eval_shifted = 30;

  int total() const {
    return train_paired + train_textonly + train_tts + eval_homogeneous +
           eval_shifted;
  }
  static DatasetSizes FromTree(const config::Tree& tree);
  void WriteTo(config::Tree& tree) const;
};

struct Datasets {
  std::vector<Utterance> train_paired;
  std::vector<TextOnlySample> train_textonly;
  std::vector<Utterance> train_tts;
  std::vector<Utterance> eval_homogeneous;
  std::vector<Utterance> eval_shifted;
};

// Splits `sentences` in order into disjoint pools (paired, text-only, TTS,
// homogeneous eval, shifted eval) and renders each. Throws
// std::invalid_argument naming the required and available counts when the
// pool is too small.
Datasets BuildDatasets(const SyntheticLanguageSpec& spec,
                       const DatasetSizes& sizes,
                       std::span<const textgen::CSSentence> sentences);

// Full generator: language, parallel pairs, code-switching text, datasets.
struct SynthesisResult {
  SyntheticLanguageSpec language;
  textgen::CorpusStats textgen_stats;
  Datasets datasets;
};
SynthesisResult Synthesize(const config::Tree& spec_tree);

inline constexpr const char* kSplitNames[] = {
    "train_paired", "train_textonly", "train_tts", "eval_homogeneous",
    "eval_shifted"};

// Writes <dir>/language.json, <dir>/<split>.jsonl manifests, feature files
// under <dir>/features/<split>/ and <dir>/MANIFEST.sha256.
void WriteDatasets(const std::string& dir, const SyntheticLanguageSpec& spec,
                   const Datasets& data);

struct LoadedLanguage {
  int phoneme_count = 0;
  int feature_dim = 0;
  std::vector<std::string> token_vocab;
};

LoadedLanguage ReadLanguage(const std::string& dir);
std::vector<Utterance> ReadUtterances(const std::string& dir,
                                      const std::string& split);
std::vector<TextOnlySample> ReadTextOnly(const std::string& dir,
                                         const std::string& split);
// Checksums recorded in MANIFEST.sha256, keyed by file name.
std::map<std::string, std::string> ReadManifestChecksums(
    const std::string& dir);

}  // namespace cstt::synth

#endif  // CSTT_SYNTHCORPUS_H_
