#include "cstt/textgen.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/algorithm/string.hpp>

namespace cstt::textgen {

namespace {

constexpr std::pair<Pos, const char*> kPosNames[] = {
    {Pos::kNoun, "NOUN"}, {Pos::kVerb, "VERB"},   {Pos::kPron, "PRON"},
    {Pos::kAdj, "ADJ"},   {Pos::kAdv, "ADV"},     {Pos::kAdp, "ADP"},
    {Pos::kDet, "DET"},   {Pos::kNum, "NUM"},     {Pos::kPart, "PART"},
    {Pos::kConj, "CONJ"}, {Pos::kPunct, "PUNCT"}, {Pos::kX, "X"},
};

std::string Where(int line_number) {
  return line_number > 0 ? "line " + std::to_string(line_number) + ": " : "";
}

std::vector<std::string> SplitFields(std::string_view s, const char* delims) {
  std::vector<std::string> out;
  std::string str(s);
  boost::algorithm::split(out, str, boost::algorithm::is_any_of(delims),
                          boost::algorithm::token_compress_on);
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

std::vector<TaggedWord> ParseTaggedSide(std::string_view side,
                                        int line_number) {
  std::vector<TaggedWord> out;
  for (const std::string& tok : SplitFields(side, " ")) {
    const std::size_t slash = tok.rfind('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == tok.size()) {
      throw FormatError(Where(line_number) + "token '" + tok +
                        "' is not of the form word/POS");
    }
    const auto pos = ParsePos(std::string_view(tok).substr(slash + 1));
    if (!pos) {
      throw FormatError(Where(line_number) + "token '" + tok +
                        "' has unknown POS tag '" + tok.substr(slash + 1) +
                        "'");
    }
    out.push_back({tok.substr(0, slash), *pos});
  }
  return out;
}

// FNV-1a over the pair id, folded with the policy seed.
std::uint64_t PairSeed(std::uint64_t seed, const std::string& pair_id) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : pair_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::optional<Pos> ParsePos(std::string_view tag) {
  for (const auto& [pos, name] : kPosNames) {
    if (tag == name) return pos;
  }
  return std::nullopt;
}

const char* PosName(Pos pos) {
  for (const auto& [p, name] : kPosNames) {
    if (p == pos) return name;
  }
  return "X";
}

void BilingualLexicon::Add(const std::string& man, const std::string& eng) {
  entries_[man].insert(eng);
}

bool BilingualLexicon::Contains(const std::string& man,
                                const std::string& eng) const {
  auto it = entries_.find(man);
  return it != entries_.end() && it->second.count(eng) > 0;
}

ParallelPair ParsePairLine(std::string_view line, int line_number) {
  std::vector<std::string> fields;
  std::string str(line);
  boost::algorithm::split(fields, str, boost::algorithm::is_any_of("\t"));
  if (fields.size() != 3) {
    throw FormatError(Where(line_number) + "expected 3 tab-separated fields, "
                      "got " + std::to_string(fields.size()));
  }
  ParallelPair pair;
  pair.pair_id = boost::algorithm::trim_copy(fields[0]);
  if (pair.pair_id.empty()) throw FormatError(Where(line_number) + "empty id");
  pair.man_tokens = ParseTaggedSide(fields[1], line_number);
  pair.eng_tokens = ParseTaggedSide(fields[2], line_number);
  if (pair.man_tokens.empty() || pair.eng_tokens.empty()) {
    throw FormatError(Where(line_number) + "pair '" + pair.pair_id +
                      "' has an empty side");
  }
  return pair;
}

std::string FormatPairLine(const ParallelPair& pair) {
  std::string out = pair.pair_id;
  for (const auto* side : {&pair.man_tokens, &pair.eng_tokens}) {
    out += '\t';
    for (std::size_t i = 0; i < side->size(); ++i) {
      if (i > 0) out += ' ';
      out += (*side)[i].word + "/" + PosName((*side)[i].pos);
    }
  }
  return out;
}

BilingualLexicon ParseLexicon(std::istream& in) {
  BilingualLexicon lex;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    boost::algorithm::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(Where(line_number) +
                        "lexicon line needs 'word<TAB>translations'");
    }
    const std::string man = boost::algorithm::trim_copy(line.substr(0, tab));
    for (const std::string& eng : SplitFields(line.substr(tab + 1), " ")) {
      lex.Add(man, eng);
    }
  }
  return lex;
}

std::vector<AlignedWordPair> AlignWords(const ParallelPair& pair,
                                        const BilingualLexicon& lexicon) {
  std::vector<AlignedWordPair> out;
  if (lexicon.empty()) return out;
  std::vector<bool> used(pair.eng_tokens.size(), false);
  for (std::size_t i = 0; i < pair.man_tokens.size(); ++i) {
    const TaggedWord& man = pair.man_tokens[i];
    if (!IsContentPos(man.pos)) continue;
    for (std::size_t j = 0; j < pair.eng_tokens.size(); ++j) {
      const TaggedWord& eng = pair.eng_tokens[j];
      if (used[j] || eng.pos != man.pos) continue;
      if (!lexicon.Contains(man.word, eng.word)) continue;
      used[j] = true;
      out.push_back({static_cast<int>(i), static_cast<int>(j), man.pos});
      break;
    }
  }
  return out;
}

void SubstitutionPolicy::Validate() const {
  if (!(target_ratio > 0.0 && target_ratio < 1.0)) {
    throw std::invalid_argument("target_ratio must lie in (0, 1)");
  }
  for (const auto& [word, count] : freq_table) {
    if (count < 0) {
      throw std::invalid_argument("negative frequency for '" + word + "'");
    }
  }
}

std::string CSSentence::Text() const {
  return boost::algorithm::join(tokens, " ");
}

CSSentence SubstituteWithBudget(const ParallelPair& pair,
                                std::span<const AlignedWordPair> alignments,
                                const SubstitutionPolicy& policy, int budget) {
  const bool into_man = policy.direction == Direction::kEnglishIntoMandarin;
  const auto& base = into_man ? pair.man_tokens : pair.eng_tokens;
  const auto& other = into_man ? pair.eng_tokens : pair.man_tokens;

  CSSentence out;
  out.source_pair_id = pair.pair_id;
  out.tokens.reserve(base.size());
  for (const TaggedWord& w : base) out.tokens.push_back(w.word);
  if (alignments.empty() || budget <= 0) return out;

  auto freq = [&](const AlignedWordPair& a) {
    const std::string& w =
        base[into_man ? a.man_index : a.eng_index].word;
    auto it = policy.freq_table.find(w);
    return it == policy.freq_table.end() ? 0L : it->second;
  };

  std::vector<std::size_t> order(alignments.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(PairSeed(policy.rng_seed, pair.pair_id));
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x,
                                                   std::size_t y) {
    const long fx = freq(alignments[x]);
    const long fy = freq(alignments[y]);
    return policy.order == FrequencyOrder::kRarestFirst ? fx < fy : fx > fy;
  });

  const std::size_t take =
      std::min(order.size(), static_cast<std::size_t>(budget));
  for (std::size_t k = 0; k < take; ++k) {
    const AlignedWordPair& a = alignments[order[k]];
    const int base_index = into_man ? a.man_index : a.eng_index;
    const int other_index = into_man ? a.eng_index : a.man_index;
    out.tokens[base_index] = other[other_index].word;
    out.substituted_indices.push_back(base_index);
  }
  std::sort(out.substituted_indices.begin(), out.substituted_indices.end());
  return out;
}

int RatioController::Budget(int sentence_tokens, int candidates) const {
  const double wanted =
      std::round(target_ * static_cast<double>(total_ + sentence_tokens));
  const long budget = static_cast<long>(wanted) - inserted_;
  return static_cast<int>(std::clamp<long>(budget, 0, candidates));
}

void RatioController::Commit(int sentence_tokens, int substitutions) {
  total_ += sentence_tokens;
  inserted_ += substitutions;
}

CSSentence Substitute(const ParallelPair& pair,
                      std::span<const AlignedWordPair> alignments,
                      const SubstitutionPolicy& policy,
                      RatioController& controller) {
  const int length = static_cast<int>(
      policy.direction == Direction::kEnglishIntoMandarin
          ? pair.man_tokens.size()
          : pair.eng_tokens.size());
  const int budget =
      controller.Budget(length, static_cast<int>(alignments.size()));
  CSSentence out = SubstituteWithBudget(pair, alignments, policy, budget);
  controller.Commit(length, static_cast<int>(out.substituted_indices.size()));
  return out;
}

CorpusGenerator::CorpusGenerator(const BilingualLexicon& lexicon,
                                 SubstitutionPolicy policy)
    : lexicon_(lexicon),
      policy_(std::move(policy)),
      controller_(policy_.target_ratio) {
  policy_.Validate();
}

CSSentence CorpusGenerator::Add(const ParallelPair& pair) {
  const std::vector<AlignedWordPair> alignments = AlignWords(pair, lexicon_);
  CSSentence sentence = Substitute(pair, alignments, policy_, controller_);
  const bool into_man = policy_.direction == Direction::kEnglishIntoMandarin;
  for (int idx : sentence.substituted_indices) {
    const Pos pos = into_man ? pair.man_tokens[idx].pos
                             : pair.eng_tokens[idx].pos;
    if (pos == Pos::kNoun) {
      ++stats_.noun_substitutions;
    } else {
      ++stats_.verb_substitutions;
    }
  }
  ++stats_.sentence_count;
  stats_.token_count += static_cast<long>(sentence.tokens.size());
  stats_.inserted_token_count +=
      static_cast<long>(sentence.substituted_indices.size());
  return sentence;
}

CorpusStats CorpusGenerator::stats() const {
  CorpusStats s = stats_;
  if (s.token_count > 0) {
    s.inserted_ratio = static_cast<double>(s.inserted_token_count) /
                       static_cast<double>(s.token_count);
    s.ratio_unreachable =
        s.inserted_ratio < policy_.target_ratio - kRatioWarningTolerance;
  }
  return s;
}

Corpus GenerateCorpus(std::span<const ParallelPair> pairs,
                      const BilingualLexicon& lexicon,
                      const SubstitutionPolicy& policy) {
  CorpusGenerator gen(lexicon, policy);
  Corpus corpus;
  corpus.sentences.reserve(pairs.size());
  for (const ParallelPair& pair : pairs) corpus.sentences.push_back(gen.Add(pair));
  corpus.stats = gen.stats();
  return corpus;
}

FrequencyTable CountFrequencies(std::span<const ParallelPair> pairs,
                                Direction direction) {
  FrequencyTable table;
  for (const ParallelPair& pair : pairs) {
    const auto& side = direction == Direction::kEnglishIntoMandarin
                           ? pair.man_tokens
                           : pair.eng_tokens;
    for (const TaggedWord& w : side) ++table[w.word];
  }
  return table;
}

std::string FormatSentenceLine(const CSSentence& sentence) {
  std::string out = sentence.source_pair_id + "\t" + sentence.Text() + "\t";
  for (std::size_t i = 0; i < sentence.substituted_indices.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(sentence.substituted_indices[i]);
  }
  return out;
}

CSSentence ParseSentenceLine(std::string_view line, int line_number) {
  std::vector<std::string> fields;
  std::string str(line);
  boost::algorithm::split(fields, str, boost::algorithm::is_any_of("\t"));
  if (fields.size() != 3) {
    throw FormatError(Where(line_number) +
                      "expected 'id<TAB>tokens<TAB>indices'");
  }
  CSSentence s;
  s.source_pair_id = fields[0];
  s.tokens = SplitFields(fields[1], " ");
  for (const std::string& idx : SplitFields(fields[2], ",")) {
    try {
      s.substituted_indices.push_back(std::stoi(idx));
    } catch (const std::exception&) {
      throw FormatError(Where(line_number) + "bad index '" + idx + "'");
    }
  }
  return s;
}

}  // namespace cstt::textgen
