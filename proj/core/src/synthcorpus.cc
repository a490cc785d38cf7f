#include "cstt/synthcorpus.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cstt/io.h"

namespace cstt::synth {

namespace fs = std::filesystem;
using textgen::Pos;
using textgen::TaggedWord;

namespace {

struct ContentEntry {
  const char* man;
  const char* eng;
};

constexpr ContentEntry kNouns[] = {
    {"书", "book"},   {"茶", "tea"},     {"车", "car"},    {"门", "door"},
    {"鱼", "fish"},   {"狗", "dog"},     {"猫", "cat"},    {"花", "flower"},
    {"树", "tree"},   {"米", "rice"},    {"水", "water"},  {"山", "hill"},
    {"河", "river"},  {"桌", "table"},   {"椅", "chair"},  {"笔", "pen"},
    {"纸", "paper"},  {"灯", "lamp"},    {"球", "ball"},   {"鸟", "bird"},
    {"船", "boat"},   {"床", "bed"},     {"刀", "knife"},  {"伞", "umbrella"},
};

constexpr ContentEntry kVerbs[] = {
    {"吃", "eat"},   {"喝", "drink"}, {"看", "watch"}, {"买", "buy"},
    {"卖", "sell"},  {"写", "write"}, {"读", "read"},  {"开", "open"},
    {"关", "close"}, {"找", "find"},  {"拿", "take"},  {"洗", "wash"},
    {"画", "draw"},  {"修", "fix"},
};

struct FunctionEntry {
  const char* man;
  const char* eng;  // nullptr: no English counterpart
  Pos pos;
};

constexpr FunctionEntry kFunctionWords[] = {
    {"我", "I", Pos::kPron},      {"你", "you", Pos::kPron},
    {"他", "he", Pos::kPron},     {"她", "she", Pos::kPron},
    {"也", "also", Pos::kAdv},    {"都", "all", Pos::kAdv},
    {"很", "very", Pos::kAdv},    {"不", "not", Pos::kAdv},
    {"了", nullptr, Pos::kPart},  {"吗", nullptr, Pos::kPart},
    {"大", "big", Pos::kAdj},     {"小", "small", Pos::kAdj},
    {"新", "new", Pos::kAdj},     {"旧", "old", Pos::kAdj},
    {"红", "red", Pos::kAdj},     {"一", "one", Pos::kNum},
    {"两", "two", Pos::kNum},     {"三", "three", Pos::kNum},
};

// Sentence shapes; PART slots have no English side.
const std::vector<std::vector<Pos>> kTemplates = {
    {Pos::kPron, Pos::kVerb, Pos::kNoun},
    {Pos::kPron, Pos::kAdv, Pos::kVerb, Pos::kNoun},
    {Pos::kPron, Pos::kVerb, Pos::kAdj, Pos::kNoun},
    {Pos::kPron, Pos::kVerb, Pos::kNum, Pos::kNoun},
    {Pos::kPron, Pos::kVerb, Pos::kNoun, Pos::kPart},
    {Pos::kPron, Pos::kVerb, Pos::kNoun, Pos::kAdv, Pos::kVerb, Pos::kNoun},
    {Pos::kPron, Pos::kAdv, Pos::kVerb, Pos::kAdj, Pos::kNoun, Pos::kPart},
};

std::uint64_t Mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word.
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::mt19937_64 Stream(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return std::mt19937_64(Mix(Mix(a, b), c));
}

constexpr std::uint64_t kDurationStream = 0x6475;
constexpr std::uint64_t kNoiseStream = 0x6e6f;

AcousticCondition ReadCondition(const config::Tree& tree,
                                const std::string& section,
                                AcousticCondition c) {
  c.noise_sigma = tree.get(section + ".noise_sigma", c.noise_sigma);
  c.duration_offset = tree.get(section + ".duration_offset", c.duration_offset);
  c.artifact_scale = tree.get(section + ".artifact_scale", c.artifact_scale);
  if (c.noise_sigma < 0.0 || c.duration_offset < 0) {
    throw std::invalid_argument(section +
                                ": noise_sigma and duration_offset must be "
                                ">= 0");
  }
  return c;
}

void WriteCondition(config::Tree& tree, const std::string& section,
                    const AcousticCondition& c) {
  tree.put(section + ".noise_sigma", c.noise_sigma);
  tree.put(section + ".duration_offset", c.duration_offset);
  tree.put(section + ".artifact_scale", c.artifact_scale);
}

int Sample(std::mt19937_64& rng, const std::vector<double>& weights) {
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return dist(rng);
}

std::vector<double> ZipfWeights(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / static_cast<double>(i + 1);
  return w;
}

}  // namespace

const char* OriginName(Origin origin) {
  return origin == Origin::kRealSim ? "REAL_SIM" : "TTS_SIM";
}

Origin ParseOrigin(const std::string& name) {
  if (name == "REAL_SIM") return Origin::kRealSim;
  if (name == "TTS_SIM") return Origin::kTtsSim;
  throw std::invalid_argument("unknown origin '" + name + "'");
}

LanguageParams LanguageParams::FromTree(const config::Tree& tree) {
  LanguageParams p;
  p.seed = tree.get("language.seed", p.seed);
  p.feature_dim = tree.get("language.feature_dim", p.feature_dim);
  p.mandarin_initials =
      tree.get("language.mandarin_initials", p.mandarin_initials);
  p.mandarin_finals = tree.get("language.mandarin_finals", p.mandarin_finals);
  p.english_phonemes =
      tree.get("language.english_phonemes", p.english_phonemes);
  p.duration_mean_min =
      tree.get("language.duration_mean_min", p.duration_mean_min);
  p.duration_mean_max =
      tree.get("language.duration_mean_max", p.duration_mean_max);
  p.duration_jitter = tree.get("language.duration_jitter", p.duration_jitter);
  p.prototype_scale = tree.get("language.prototype_scale", p.prototype_scale);
  p.artifact_norm = tree.get("language.artifact_norm", p.artifact_norm);
  p.real = ReadCondition(tree, "real", p.real);
  p.tts = ReadCondition(tree, "tts", p.tts);
  p.shifted = ReadCondition(tree, "shifted", p.shifted);
  return p;
}

void LanguageParams::WriteTo(config::Tree& tree) const {
  tree.put("language.seed", seed);
  tree.put("language.feature_dim", feature_dim);
  tree.put("language.mandarin_initials", mandarin_initials);
  tree.put("language.mandarin_finals", mandarin_finals);
  tree.put("language.english_phonemes", english_phonemes);
  tree.put("language.duration_mean_min", duration_mean_min);
  tree.put("language.duration_mean_max", duration_mean_max);
  tree.put("language.duration_jitter", duration_jitter);
  tree.put("language.prototype_scale", prototype_scale);
  tree.put("language.artifact_norm", artifact_norm);
  WriteCondition(tree, "real", real);
  WriteCondition(tree, "tts", tts);
  WriteCondition(tree, "shifted", shifted);
}

int SyntheticLanguageSpec::TokenId(const std::string& token) const {
  auto it = token_ids.find(token);
  if (it == token_ids.end()) {
    throw std::invalid_argument("token '" + token +
                                "' is not in the synthetic vocabulary");
  }
  return it->second;
}

std::vector<int> SyntheticLanguageSpec::TokenIds(
    std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(TokenId(t));
  return ids;
}

std::vector<std::string> SyntheticLanguageSpec::TokenStrings(
    std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token_vocab.at(id));
  return out;
}

SyntheticLanguageSpec BuildLanguage(const LanguageParams& params) {
  if (params.feature_dim < 1 || params.mandarin_initials < 1 ||
      params.mandarin_finals < 1 || params.english_phonemes < 1) {
    throw std::invalid_argument("language: dimensions must be positive");
  }
  if (params.duration_mean_min < 1.0 ||
      params.duration_mean_max < params.duration_mean_min) {
    throw std::invalid_argument(
        "language: duration means must satisfy 1 <= min <= max");
  }
  SyntheticLanguageSpec spec;
  spec.params = params;
  std::mt19937_64 rng(Mix(params.seed, 0x6c616e67));

  for (const auto& e : kNouns) {
    spec.mandarin_words.push_back({e.man, Pos::kNoun});
    spec.english_words.push_back({e.eng, Pos::kNoun});
    spec.dictionary.Add(e.man, e.eng);
  }
  for (const auto& e : kVerbs) {
    spec.mandarin_words.push_back({e.man, Pos::kVerb});
    spec.english_words.push_back({e.eng, Pos::kVerb});
    spec.dictionary.Add(e.man, e.eng);
  }
  for (const auto& e : kFunctionWords) {
    spec.mandarin_words.push_back({e.man, e.pos});
  }

  // Only words that can appear in generated text are recognisable tokens:
  // every Mandarin word and the English content words.
  spec.token_vocab.push_back("<blk>");
  for (const auto& w : spec.mandarin_words) spec.token_vocab.push_back(w.word);
  for (const auto& w : spec.english_words) spec.token_vocab.push_back(w.word);
  for (int i = 0; i < spec.vocab_size(); ++i) {
    spec.token_ids.emplace(spec.token_vocab[i], i);
  }

  const int initials = params.mandarin_initials;
  const int finals = params.mandarin_finals;
  const int english = params.english_phonemes;
  spec.phoneme_count = initials + finals + english;
  const std::size_t n_man = spec.mandarin_words.size();
  if (static_cast<std::size_t>(initials * finals) < n_man) {
    throw std::invalid_argument(
        "language: initials x finals must cover " + std::to_string(n_man) +
        " Mandarin syllables");
  }
  std::vector<std::pair<int, int>> syllables;
  for (int i = 0; i < initials; ++i) {
    for (int f = 0; f < finals; ++f) syllables.emplace_back(i, initials + f);
  }
  std::shuffle(syllables.begin(), syllables.end(), rng);

  spec.lexicon.assign(spec.vocab_size(), {});
  for (std::size_t w = 0; w < n_man; ++w) {
    spec.lexicon[1 + w] = {syllables[w].first, syllables[w].second};
  }
  std::set<std::vector<int>> used;
  std::uniform_int_distribution<int> eng_only(initials + finals,
                                              spec.phoneme_count - 1);
  std::uniform_int_distribution<int> any(0, spec.phoneme_count - 1);
  std::uniform_int_distribution<int> len(3, 4);
  for (std::size_t w = 0; w < spec.english_words.size(); ++w) {
    std::vector<int> phones;
    do {
      phones.assign(1, eng_only(rng));
      const int n = len(rng);
      while (static_cast<int>(phones.size()) < n) phones.push_back(any(rng));
    } while (!used.insert(phones).second);
    spec.lexicon[1 + n_man + w] = phones;
  }

  std::uniform_real_distribution<double> mean(params.duration_mean_min,
                                              params.duration_mean_max);
  spec.duration_mean.resize(spec.phoneme_count);
  for (double& m : spec.duration_mean) m = mean(rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  spec.prototypes.resize(spec.phoneme_count, params.feature_dim);
  for (Eigen::Index i = 0; i < spec.prototypes.size(); ++i) {
    spec.prototypes.data()[i] = params.prototype_scale * normal(rng);
  }
  spec.artifact.resize(params.feature_dim);
  for (Eigen::Index i = 0; i < spec.artifact.size(); ++i) {
    spec.artifact(i) = normal(rng);
  }
  spec.artifact *= params.artifact_norm / spec.artifact.norm();
  return spec;
}

std::vector<textgen::ParallelPair> GenerateParallelPairs(
    const SyntheticLanguageSpec& spec, int count, std::uint64_t seed) {
  std::mt19937_64 rng(Mix(spec.params.seed, seed));
  const std::vector<double> noun_w = ZipfWeights(std::size(kNouns));
  const std::vector<double> verb_w = ZipfWeights(std::size(kVerbs));
  std::map<Pos, std::vector<const FunctionEntry*>> by_pos;
  for (const auto& e : kFunctionWords) by_pos[e.pos].push_back(&e);

  std::vector<textgen::ParallelPair> pairs;
  pairs.reserve(count);
  std::uniform_int_distribution<std::size_t> pick_template(
      0, kTemplates.size() - 1);
  for (int n = 0; n < count; ++n) {
    textgen::ParallelPair pair;
    char id[32];
    std::snprintf(id, sizeof(id), "p%06d", n);
    pair.pair_id = id;
    for (Pos pos : kTemplates[pick_template(rng)]) {
      if (pos == Pos::kNoun) {
        const auto& e = kNouns[Sample(rng, noun_w)];
        pair.man_tokens.push_back({e.man, pos});
        pair.eng_tokens.push_back({e.eng, pos});
      } else if (pos == Pos::kVerb) {
        const auto& e = kVerbs[Sample(rng, verb_w)];
        pair.man_tokens.push_back({e.man, pos});
        pair.eng_tokens.push_back({e.eng, pos});
      } else {
        const auto& choices = by_pos.at(pos);
        std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
        const FunctionEntry* e = choices[pick(rng)];
        pair.man_tokens.push_back({e->man, pos});
        if (e->eng != nullptr) pair.eng_tokens.push_back({e->eng, pos});
      }
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

model::PhonemeSequence Pronounce(std::span<const std::string> tokens,
                                 const SyntheticLanguageSpec& spec,
                                 int duration_offset, std::uint64_t seed) {
  std::mt19937_64 rng = Stream(spec.params.seed, seed, kDurationStream);
  std::uniform_real_distribution<double> jitter(
      -static_cast<double>(spec.params.duration_jitter),
      static_cast<double>(spec.params.duration_jitter));
  model::PhonemeSequence ph;
  for (const std::string& tok : tokens) {
    for (int p : spec.lexicon[spec.TokenId(tok)]) {
      ph.ids.push_back(p);
      const long d = std::lround(spec.duration_mean[p] + jitter(rng));
      ph.durations.push_back(static_cast<int>(std::max(1L, d)) +
                             duration_offset);
    }
  }
  return ph;
}

Utterance SynthUtterance(std::span<const std::string> tokens,
                         const SyntheticLanguageSpec& spec,
                         std::uint64_t seed) {
  return SynthUtterance(tokens, spec, spec.params.real, seed,
                        Origin::kRealSim);
}

Utterance SynthUtterance(std::span<const std::string> tokens,
                         const SyntheticLanguageSpec& spec,
                         const AcousticCondition& condition, std::uint64_t seed,
                         Origin origin) {
  if (tokens.empty()) throw std::invalid_argument("synth: empty transcript");
  Utterance utt;
  utt.tokens.assign(tokens.begin(), tokens.end());
  utt.token_ids = spec.TokenIds(tokens);
  utt.phonemes = Pronounce(tokens, spec, condition.duration_offset, seed);
  utt.origin = origin;

  const int frames = utt.phonemes.total_frames();
  const int dim = spec.params.feature_dim;
  utt.features.resize(frames, dim);
  std::mt19937_64 rng = Stream(spec.params.seed, seed, kNoiseStream);
  std::normal_distribution<double> noise(0.0, 1.0);
  const RowVector shift = spec.artifact * condition.artifact_scale;
  int row = 0;
  for (std::size_t i = 0; i < utt.phonemes.ids.size(); ++i) {
    const RowVector base = spec.prototypes.row(utt.phonemes.ids[i]) + shift;
    for (int k = 0; k < utt.phonemes.durations[i]; ++k, ++row) {
      for (int c = 0; c < dim; ++c) {
        const double v = base(c) + condition.noise_sigma * noise(rng);
        // Stored at feature-file precision so on-disk and in-memory
        // corpora train identically.
        utt.features(row, c) = static_cast<float>(v);
      }
    }
  }
  return utt;
}

Utterance SimulateTts(const textgen::CSSentence& sentence,
                      const SyntheticLanguageSpec& spec, std::uint64_t seed) {
  Utterance utt = SynthUtterance(sentence.tokens, spec, spec.params.tts, seed,
                                 Origin::kTtsSim);
  utt.id = sentence.source_pair_id;
  return utt;
}

DatasetSizes DatasetSizes::FromTree(const config::Tree& tree) {
  DatasetSizes s;
  s.train_paired = tree.get("datasets.train_paired", s.train_paired);
  s.train_textonly = tree.get("datasets.train_textonly", s.train_textonly);
  s.train_tts = tree.get("datasets.train_tts", s.train_tts);
  s.eval_homogeneous =
      tree.get("datasets.eval_homogeneous", s.eval_homogeneous);
  s.eval_shifted = tree.get("datasets.eval_shifted", s.eval_shifted);
  return s;
}

void DatasetSizes::WriteTo(config::Tree& tree) const {
  tree.put("datasets.train_paired", train_paired);
  tree.put("datasets.train_textonly", train_textonly);
  tree.put("datasets.train_tts", train_tts);
  tree.put("datasets.eval_homogeneous", eval_homogeneous);
  tree.put("datasets.eval_shifted", eval_shifted);
}

Datasets BuildDatasets(const SyntheticLanguageSpec& spec,
                       const DatasetSizes& sizes,
                       std::span<const textgen::CSSentence> sentences) {
  const int counts[] = {sizes.train_paired, sizes.train_textonly,
                        sizes.train_tts, sizes.eval_homogeneous,
                        sizes.eval_shifted};
  for (int c : counts) {
    if (c < 1) throw std::invalid_argument("dataset sizes must be positive");
  }
  if (static_cast<int>(sentences.size()) < sizes.total()) {
    throw std::invalid_argument(
        "sentence pool too small: need " + std::to_string(sizes.total()) +
        " (" + std::to_string(sizes.train_paired) + " paired + " +
        std::to_string(sizes.train_textonly) + " text-only + " +
        std::to_string(sizes.train_tts) + " tts + " +
        std::to_string(sizes.eval_homogeneous) + " homogeneous + " +
        std::to_string(sizes.eval_shifted) + " shifted), have " +
        std::to_string(sentences.size()));
  }
  Datasets data;
  std::size_t next = 0;
  auto take = [&](int n) {
    auto block = sentences.subspan(next, static_cast<std::size_t>(n));
    next += static_cast<std::size_t>(n);
    return block;
  };
  auto seed_of = [](int split, std::size_t i) {
    return Mix(static_cast<std::uint64_t>(split) + 1, i);
  };
  auto render = [&](std::span<const textgen::CSSentence> block, int split,
                    const AcousticCondition& cond, Origin origin) {
    std::vector<Utterance> out;
    out.reserve(block.size());
    for (std::size_t i = 0; i < block.size(); ++i) {
      Utterance u = SynthUtterance(block[i].tokens, spec, cond,
                                   seed_of(split, i), origin);
      u.id = block[i].source_pair_id;
      out.push_back(std::move(u));
    }
    return out;
  };

  data.train_paired =
      render(take(sizes.train_paired), 0, spec.params.real, Origin::kRealSim);
  for (const auto& s : take(sizes.train_textonly)) {
    TextOnlySample t;
    t.id = s.source_pair_id;
    t.tokens = s.tokens;
    t.token_ids = spec.TokenIds(s.tokens);
    t.phonemes = Pronounce(s.tokens, spec, 0,
                           seed_of(1, data.train_textonly.size()));
    data.train_textonly.push_back(std::move(t));
  }
  data.train_tts =
      render(take(sizes.train_tts), 2, spec.params.tts, Origin::kTtsSim);
  data.eval_homogeneous = render(take(sizes.eval_homogeneous), 3,
                                 spec.params.real, Origin::kRealSim);
  data.eval_shifted = render(take(sizes.eval_shifted), 4, spec.params.shifted,
                             Origin::kRealSim);
  return data;
}

SynthesisResult Synthesize(const config::Tree& tree) {
  SynthesisResult result;
  result.language = BuildLanguage(LanguageParams::FromTree(tree));
  const DatasetSizes sizes = DatasetSizes::FromTree(tree);
  const auto pairs = GenerateParallelPairs(
      result.language, sizes.total(), tree.get<std::uint64_t>("textgen.seed", 1));
  textgen::SubstitutionPolicy policy;
  policy.target_ratio = tree.get("textgen.ratio", policy.target_ratio);
  policy.rng_seed = tree.get<std::uint64_t>("textgen.seed", 1);
  policy.freq_table = textgen::CountFrequencies(pairs, policy.direction);
  textgen::Corpus corpus =
      textgen::GenerateCorpus(pairs, result.language.dictionary, policy);
  result.textgen_stats = corpus.stats;
  result.datasets = BuildDatasets(result.language, sizes, corpus.sentences);
  return result;
}

namespace {

nlohmann::json PhonemeJson(const model::PhonemeSequence& ph) {
  return {{"phonemes", ph.ids}, {"durations", ph.durations}};
}

std::string JoinTokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

void WriteDatasets(const std::string& dir, const SyntheticLanguageSpec& spec,
                   const Datasets& data) {
  fs::create_directories(dir);
  nlohmann::json lang = {{"phoneme_count", spec.phoneme_count},
                         {"feature_dim", spec.params.feature_dim},
                         {"token_vocab", spec.token_vocab},
                         {"lexicon", spec.lexicon}};
  io::WriteFile(dir + "/language.json", lang.dump(1) + "\n");

  auto utterance_split = [&](const std::string& split,
                             const std::vector<Utterance>& utts) {
    fs::create_directories(dir + "/features/" + split);
    std::vector<nlohmann::json> records;
    for (const Utterance& u : utts) {
      const std::string rel = "features/" + split + "/" + u.id + ".f32";
      const std::string bytes = io::EncodeFeatures(u.features);
      io::WriteFile(dir + "/" + rel, bytes);
      nlohmann::json r = {{"id", u.id},
                          {"features", rel},
                          {"features_sha256", io::Sha256Hex(bytes)},
                          {"frames", u.features.rows()},
                          {"transcript", JoinTokens(u.tokens)},
                          {"tokens", u.tokens},
                          {"token_ids", u.token_ids},
                          {"origin", OriginName(u.origin)}};
      r.update(PhonemeJson(u.phonemes));
      records.push_back(std::move(r));
    }
    io::WriteJsonLines(dir + "/" + split + ".jsonl", records);
  };
  utterance_split("train_paired", data.train_paired);
  {
    std::vector<nlohmann::json> records;
    for (const TextOnlySample& t : data.train_textonly) {
      nlohmann::json r = {{"id", t.id},
                          {"features", nullptr},
                          {"transcript", JoinTokens(t.tokens)},
                          {"tokens", t.tokens},
                          {"token_ids", t.token_ids},
                          {"origin", "TEXT_ONLY"}};
      r.update(PhonemeJson(t.phonemes));
      records.push_back(std::move(r));
    }
    io::WriteJsonLines(dir + "/train_textonly.jsonl", records);
  }
  utterance_split("train_tts", data.train_tts);
  utterance_split("eval_homogeneous", data.eval_homogeneous);
  utterance_split("eval_shifted", data.eval_shifted);

  std::string sums;
  for (const std::string name :
       {"language.json", "train_paired.jsonl", "train_textonly.jsonl",
        "train_tts.jsonl", "eval_homogeneous.jsonl", "eval_shifted.jsonl"}) {
    sums += io::Sha256File(dir + "/" + name) + "  " + name + "\n";
  }
  io::WriteFile(dir + "/MANIFEST.sha256", sums);
}

LoadedLanguage ReadLanguage(const std::string& dir) {
  const auto j = nlohmann::json::parse(io::ReadFile(dir + "/language.json"));
  LoadedLanguage lang;
  lang.phoneme_count = j.at("phoneme_count").get<int>();
  lang.feature_dim = j.at("feature_dim").get<int>();
  lang.token_vocab = j.at("token_vocab").get<std::vector<std::string>>();
  return lang;
}

std::vector<Utterance> ReadUtterances(const std::string& dir,
                                      const std::string& split) {
  std::vector<Utterance> out;
  for (const auto& r : io::ReadJsonLines(dir + "/" + split + ".jsonl")) {
    Utterance u;
    u.id = r.at("id").get<std::string>();
    u.features = io::ReadFeatures(dir + "/" + r.at("features").get<std::string>());
    u.tokens = r.at("tokens").get<std::vector<std::string>>();
    u.token_ids = r.at("token_ids").get<std::vector<int>>();
    u.phonemes.ids = r.at("phonemes").get<std::vector<int>>();
    u.phonemes.durations = r.at("durations").get<std::vector<int>>();
    u.origin = ParseOrigin(r.at("origin").get<std::string>());
    if (u.phonemes.total_frames() != u.features.rows()) {
      throw std::runtime_error(split + "/" + u.id +
                               ": durations do not sum to the frame count");
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<TextOnlySample> ReadTextOnly(const std::string& dir,
                                         const std::string& split) {
  std::vector<TextOnlySample> out;
  for (const auto& r : io::ReadJsonLines(dir + "/" + split + ".jsonl")) {
    TextOnlySample t;
    t.id = r.at("id").get<std::string>();
    t.tokens = r.at("tokens").get<std::vector<std::string>>();
    t.token_ids = r.at("token_ids").get<std::vector<int>>();
    t.phonemes.ids = r.at("phonemes").get<std::vector<int>>();
    t.phonemes.durations = r.at("durations").get<std::vector<int>>();
    out.push_back(std::move(t));
  }
  return out;
}

std::map<std::string, std::string> ReadManifestChecksums(
    const std::string& dir) {
  std::map<std::string, std::string> out;
  std::istringstream in(io::ReadFile(dir + "/MANIFEST.sha256"));
  std::string hash;
  std::string name;
  while (in >> hash >> name) out[name] = hash;
  return out;
}

}  // namespace cstt::synth
