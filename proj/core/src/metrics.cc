#include "cstt/metrics.h"

#include <algorithm>
#include <cstdint>
#include <cstdio>

namespace cstt::metrics {

namespace {

// Decodes one UTF-8 code point starting at text[pos]; advances pos.
char32_t DecodeUtf8(std::string_view text, std::size_t& pos) {
  const auto byte = [&](std::size_t i) {
    return static_cast<unsigned char>(text[i]);
  };
  const std::size_t start = pos;
  const unsigned char b0 = byte(pos);
  int extra = 0;
  char32_t cp = 0;
  if (b0 < 0x80) {
    cp = b0;
  } else if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    extra = 1;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    extra = 2;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    extra = 3;
  } else {
    throw TokenizeError("invalid UTF-8 lead byte at offset " +
                            std::to_string(start),
                        start);
  }
  if (pos + extra >= text.size()) {
    throw TokenizeError("truncated UTF-8 sequence at offset " +
                            std::to_string(start),
                        start);
  }
  for (int i = 1; i <= extra; ++i) {
    const unsigned char b = byte(pos + i);
    if ((b & 0xC0) != 0x80) {
      throw TokenizeError("invalid UTF-8 continuation at offset " +
                              std::to_string(start),
                          start);
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  pos += extra + 1;
  return cp;
}

bool IsHan(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
         (cp >= 0x20000 && cp <= 0x2A6DF) || (cp >= 0xF900 && cp <= 0xFAFF);
}

bool IsLatinLetter(char32_t cp) {
  return (cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z');
}

bool IsDropped(char32_t cp) {
  if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' ||
      cp == '\f' || cp == 0x3000) {
    return true;
  }
  if (cp < 0x80) {
    return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') ||
           (cp >= '[' && cp <= '`') || (cp >= '{' && cp <= '~');
  }
  // CJK symbols and punctuation, fullwidth ASCII punctuation, general
  // punctuation (quotes, dashes, ellipsis).
  return (cp >= 0x3001 && cp <= 0x303F) || (cp >= 0xFF01 && cp <= 0xFF0F) ||
         (cp >= 0xFF1A && cp <= 0xFF20) || (cp >= 0xFF3B && cp <= 0xFF40) ||
         (cp >= 0xFF5B && cp <= 0xFF65) || (cp >= 0x2010 && cp <= 0x2027);
}

}  // namespace

const char* LangName(Lang lang) { return lang == Lang::kMan ? "MAN" : "ENG"; }

std::vector<ScoredToken> TokenizeMixed(std::string_view text) {
  std::vector<ScoredToken> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back({std::move(word), Lang::kEng});
    word.clear();
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t start = pos;
    const char32_t cp = DecodeUtf8(text, pos);
    if (IsLatinLetter(cp)) {
      word.push_back(static_cast<char>(cp));
      continue;
    }
    // An apostrophe between two letters stays inside the word ("don't").
    if (cp == '\'' && !word.empty() && pos < text.size() &&
        IsLatinLetter(static_cast<unsigned char>(text[pos]))) {
      word.push_back('\'');
      continue;
    }
    flush();
    if (IsHan(cp)) {
      out.push_back({std::string(text.substr(start, pos - start)), Lang::kMan});
    } else if (!IsDropped(cp)) {
      char hex[16];
      std::snprintf(hex, sizeof(hex), "U+%04X", static_cast<unsigned>(cp));
      throw TokenizeError(std::string("character ") + hex + " at byte offset " +
                              std::to_string(start) +
                              " is neither Han nor Latin",
                          start);
    }
  }
  flush();
  return out;
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_tokens += o.ref_tokens;
  return *this;
}

ErrorCounts MetricsReport::total() const {
  ErrorCounts t = man;
  t += eng;
  return t;
}

MetricsReport ReportFromCounts(const ErrorCounts& man, const ErrorCounts& eng) {
  MetricsReport r;
  r.man = man;
  r.eng = eng;
  const ErrorCounts all = r.total();
  r.man_zero_denominator = man.ref_tokens == 0;
  r.eng_zero_denominator = eng.ref_tokens == 0;
  r.degenerate = all.ref_tokens == 0 && all.errors() > 0;
  r.ter = 100.0 * static_cast<double>(all.errors()) /
          static_cast<double>(std::max(1L, all.ref_tokens));
  r.cer_man = r.man_zero_denominator
                  ? 0.0
                  : 100.0 * static_cast<double>(man.errors()) /
                        static_cast<double>(man.ref_tokens);
  r.wer_eng = r.eng_zero_denominator
                  ? 0.0
                  : 100.0 * static_cast<double>(eng.errors()) /
                        static_cast<double>(eng.ref_tokens);
  return r;
}

MetricsReport& MetricsReport::operator+=(const MetricsReport& o) {
  ErrorCounts m = man;
  m += o.man;
  ErrorCounts e = eng;
  e += o.eng;
  *this = ReportFromCounts(m, e);
  return *this;
}

std::vector<AlignedOp> Align(std::span<const ScoredToken> ref,
                             std::span<const ScoredToken> hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<int> cost((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& {
    return cost[i * (m + 1) + j];
  };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  std::vector<AlignedOp> ops;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        ops.push_back({same ? EditOp::kMatch : EditOp::kSubstitution,
                       static_cast<int>(i - 1), static_cast<int>(j - 1)});
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ops.push_back({EditOp::kDeletion, static_cast<int>(i - 1), -1});
      --i;
      continue;
    }
    ops.push_back({EditOp::kInsertion, -1, static_cast<int>(j - 1)});
    --j;
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

MetricsReport Score(std::span<const ScoredToken> ref,
                    std::span<const ScoredToken> hyp) {
  ErrorCounts man;
  ErrorCounts eng;
  auto bucket = [&](Lang lang) -> ErrorCounts& {
    return lang == Lang::kMan ? man : eng;
  };
  for (const ScoredToken& tok : ref) ++bucket(tok.lang).ref_tokens;
  for (const AlignedOp& op : Align(ref, hyp)) {
    switch (op.op) {
      case EditOp::kMatch:
        break;
      case EditOp::kSubstitution:
        ++bucket(ref[op.ref_index].lang).substitutions;
        break;
      case EditOp::kDeletion:
        ++bucket(ref[op.ref_index].lang).deletions;
        break;
      case EditOp::kInsertion:
        ++bucket(hyp[op.hyp_index].lang).insertions;
        break;
    }
  }
  return ReportFromCounts(man, eng);
}

}  // namespace cstt::metrics
