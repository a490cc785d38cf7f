#ifndef CSTT_TEXTGEN_H_
#define CSTT_TEXTGEN_H_

// Code-switching text generation from POS-tagged parallel Mandarin/English
// sentence pairs: dictionary alignment of nouns and verbs, then
// frequency-ranked substitution steered toward a target English-token ratio.

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cstt::textgen {

// Universal POS tag set.
enum class Pos {
  kNoun,
  kVerb,
  kPron,
  kAdj,
  kAdv,
  kAdp,
  kDet,
  kNum,
  kPart,
  kConj,
  kPunct,
  kX,
};

std::optional<Pos> ParsePos(std::string_view tag);
const char* PosName(Pos pos);
inline bool IsContentPos(Pos pos) { return pos == Pos::kNoun || pos == Pos::kVerb; }

struct TaggedWord {
  std::string word;
  Pos pos = Pos::kX;

  bool operator==(const TaggedWord&) const = default;
};

struct ParallelPair {
  std::string pair_id;
  std::vector<TaggedWord> man_tokens;
  std::vector<TaggedWord> eng_tokens;
};

struct AlignedWordPair {
  int man_index = 0;
  int eng_index = 0;
  Pos pos = Pos::kNoun;

  bool operator==(const AlignedWordPair&) const = default;
};

// Mandarin word -> set of English translations.
class BilingualLexicon {
 public:
  void Add(const std::string& man, const std::string& eng);
  bool Contains(const std::string& man, const std::string& eng) const;
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, std::set<std::string>>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::set<std::string>> entries_;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "id<TAB>w/POS w/POS ...<TAB>w/POS ..." -> ParallelPair. Throws FormatError
// naming the line and token on malformed input or unknown POS tags.
ParallelPair ParsePairLine(std::string_view line, int line_number = 0);
std::string FormatPairLine(const ParallelPair& pair);
// "man<TAB>eng1 eng2 ..." per line.
BilingualLexicon ParseLexicon(std::istream& in);

// Every NOUN/VERB Mandarin token whose lexicon entry contains an English
// token of the same POS is paired with the leftmost such unused English
// token, scanning Mandarin tokens left to right.
std::vector<AlignedWordPair> AlignWords(const ParallelPair& pair,
                                        const BilingualLexicon& lexicon);

enum class FrequencyOrder { kRarestFirst, kCommonestFirst };

// kEnglishIntoMandarin keeps the Mandarin sentence and inserts English
// words; kMandarinIntoEnglish is the reverse direction.
enum class Direction { kEnglishIntoMandarin, kMandarinIntoEnglish };

using FrequencyTable = std::unordered_map<std::string, long>;

struct SubstitutionPolicy {
  // Target fraction of inserted-language tokens in the output corpus.
  double target_ratio = 0.10;
  // Word counts for the base-language side; missing words count as 0.
  FrequencyTable freq_table;
  std::uint64_t rng_seed = 0;
  FrequencyOrder order = FrequencyOrder::kRarestFirst;
  Direction direction = Direction::kEnglishIntoMandarin;

  // Throws std::invalid_argument unless 0 < target_ratio < 1 and all
  // frequencies are non-negative.
  void Validate() const;
};

struct CSSentence {
  std::vector<std::string> tokens;
  std::vector<int> substituted_indices;
  std::string source_pair_id;

  // Tokens joined with single spaces.
  std::string Text() const;
  bool operator==(const CSSentence&) const = default;
};

// Replaces up to `budget` aligned base-language words, ranked by frequency
// under policy.order; equal frequencies are ordered by a seeded shuffle.
CSSentence SubstituteWithBudget(const ParallelPair& pair,
                                std::span<const AlignedWordPair> alignments,
                                const SubstitutionPolicy& policy, int budget);

// Running-ratio controller: the per-sentence budget is the number of
// substitutions that brings the corpus ratio nearest the target, clamped to
// [0, candidates].
class RatioController {
 public:
  explicit RatioController(double target_ratio) : target_(target_ratio) {}

  int Budget(int sentence_tokens, int candidates) const;
  void Commit(int sentence_tokens, int substitutions);

  long inserted_tokens() const { return inserted_; }
  long total_tokens() const { return total_; }

 private:
  double target_;
  long inserted_ = 0;
  long total_ = 0;
};

CSSentence Substitute(const ParallelPair& pair,
                      std::span<const AlignedWordPair> alignments,
                      const SubstitutionPolicy& policy,
                      RatioController& controller);

struct CorpusStats {
  long sentence_count = 0;
  long token_count = 0;
  long inserted_token_count = 0;
  double inserted_ratio = 0.0;
  long noun_substitutions = 0;
  long verb_substitutions = 0;
  // Final ratio fell more than kRatioWarningTolerance short of the target.
  bool ratio_unreachable = false;

  bool operator==(const CorpusStats&) const = default;
};

inline constexpr double kRatioWarningTolerance = 0.02;

// Streaming front end over Substitute(). Pairs must be fed in a fixed order
// for the output to be reproducible.
class CorpusGenerator {
 public:
  CorpusGenerator(const BilingualLexicon& lexicon, SubstitutionPolicy policy);

  CSSentence Add(const ParallelPair& pair);
  CorpusStats stats() const;

 private:
  const BilingualLexicon& lexicon_;
  SubstitutionPolicy policy_;
  RatioController controller_;
  CorpusStats stats_;
};

struct Corpus {
  std::vector<CSSentence> sentences;
  CorpusStats stats;
};

Corpus GenerateCorpus(std::span<const ParallelPair> pairs,
                      const BilingualLexicon& lexicon,
                      const SubstitutionPolicy& policy);

// Word counts over the base-language side selected by `direction`.
FrequencyTable CountFrequencies(std::span<const ParallelPair> pairs,
                                Direction direction);

// "id<TAB>tokens<TAB>comma-separated substituted indices".
std::string FormatSentenceLine(const CSSentence& sentence);
CSSentence ParseSentenceLine(std::string_view line, int line_number = 0);

}  // namespace cstt::textgen

#endif  // CSTT_TEXTGEN_H_
