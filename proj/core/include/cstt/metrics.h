#ifndef CSTT_METRICS_H_
#define CSTT_METRICS_H_

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cstt::metrics {

enum class Lang { kMan, kEng };

const char* LangName(Lang lang);

struct ScoredToken {
  std::string text;
  Lang lang = Lang::kMan;

  bool operator==(const ScoredToken&) const = default;
};

class TokenizeError : public std::runtime_error {
 public:
  TokenizeError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Splits a transcript into Han characters (one token each) and maximal Latin
// letter runs. Whitespace and ASCII/CJK punctuation are dropped; any other
// code point (digits included) raises TokenizeError with its byte offset.
std::vector<ScoredToken> TokenizeMixed(std::string_view text);

struct ErrorCounts {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long ref_tokens = 0;

  long errors() const { return substitutions + deletions + insertions; }
  ErrorCounts& operator+=(const ErrorCounts& o);
  bool operator==(const ErrorCounts&) const = default;
};

struct MetricsReport {
  double ter = 0.0;
  double cer_man = 0.0;
  double wer_eng = 0.0;
  ErrorCounts man;
  ErrorCounts eng;
  // Set when the language has no reference tokens; its rate is reported 0.
  bool man_zero_denominator = false;
  bool eng_zero_denominator = false;
  // Empty reference with a non-empty hypothesis.
  bool degenerate = false;

  ErrorCounts total() const;
  // Adds another report's counts and recomputes the rates (corpus pooling).
  MetricsReport& operator+=(const MetricsReport& o);
};

// Recomputes rates from counts.
MetricsReport ReportFromCounts(const ErrorCounts& man, const ErrorCounts& eng);

enum class EditOp { kMatch, kSubstitution, kDeletion, kInsertion };

struct AlignedOp {
  EditOp op;
  int ref_index;  // -1 for insertions
  int hyp_index;  // -1 for deletions
};

// Unit-cost Levenshtein alignment. Backtrace preference on ties:
// match > substitution > deletion > insertion.
std::vector<AlignedOp> Align(std::span<const ScoredToken> ref,
                             std::span<const ScoredToken> hyp);

// Substitutions and deletions are charged to the reference token's language,
// insertions to the hypothesis token's language.
MetricsReport Score(std::span<const ScoredToken> ref,
                    std::span<const ScoredToken> hyp);

}  // namespace cstt::metrics

#endif  // CSTT_METRICS_H_
