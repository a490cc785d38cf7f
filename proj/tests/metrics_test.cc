#include "cstt/metrics.h"

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "gtest/gtest.h"

namespace cstt::metrics {
namespace {

std::vector<ScoredToken> Toks(std::string_view s) { return TokenizeMixed(s); }

// Minimum edits over every alignment, by unmemoised recursion.
int BruteForceDistance(const std::vector<ScoredToken>& r,
                       const std::vector<ScoredToken>& h, std::size_t i = 0,
                       std::size_t j = 0) {
  if (i == r.size()) return static_cast<int>(h.size() - j);
  if (j == h.size()) return static_cast<int>(r.size() - i);
  const int sub = BruteForceDistance(r, h, i + 1, j + 1) +
                  (r[i].text == h[j].text ? 0 : 1);
  const int del = BruteForceDistance(r, h, i + 1, j) + 1;
  const int ins = BruteForceDistance(r, h, i, j + 1) + 1;
  return std::min({sub, del, ins});
}

TEST(TokenizeMixedTest, SplitsHanCharactersAndLatinWords) {
  const auto t = Toks("我想买 iPhone 手机");
  ASSERT_EQ(t.size(), 6u);
  EXPECT_EQ(t[0], (ScoredToken{"我", Lang::kMan}));
  EXPECT_EQ(t[3], (ScoredToken{"iPhone", Lang::kEng}));
  EXPECT_EQ(t[5], (ScoredToken{"机", Lang::kMan}));
}

TEST(TokenizeMixedTest, HanAdjacentToLatinSplits) {
  const auto t = Toks("用wechat付");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[1].text, "wechat");
}

TEST(TokenizeMixedTest, DropsPunctuation) {
  const auto t = Toks("你好，world! “ok”。");
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[2].text, "world");
  EXPECT_EQ(t[3].text, "ok");
}

TEST(TokenizeMixedTest, KeepsInnerApostrophe) {
  const auto t = Toks("I don't 'know'");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[1].text, "don't");
  EXPECT_EQ(t[2].text, "know");
}

TEST(TokenizeMixedTest, EmptyAndWhitespaceOnly) {
  EXPECT_TRUE(Toks("").empty());
  EXPECT_TRUE(Toks(" \t　").empty());
}

TEST(TokenizeMixedTest, RejectsOtherScriptsWithOffset) {
  try {
    Toks("ab 3");
    FAIL() << "digit accepted";
  } catch (const TokenizeError& e) {
    EXPECT_EQ(e.byte_offset(), 3u);
  }
  EXPECT_THROW(Toks("こんにちは"), TokenizeError);
}

TEST(TokenizeMixedTest, RejectsMalformedUtf8) {
  EXPECT_THROW(Toks(std::string("a\xff")), TokenizeError);
  EXPECT_THROW(Toks(std::string("\xe6\x88")), TokenizeError);
  EXPECT_THROW(Toks(std::string("\xe6\x41\x41")), TokenizeError);
}

TEST(ScoreTest, IdenticalIsZero) {
  const auto r = Score(Toks("我 要 book 了"), Toks("我 要 book 了"));
  EXPECT_EQ(r.ter, 0.0);
  EXPECT_EQ(r.man.ref_tokens, 3);
  EXPECT_EQ(r.eng.ref_tokens, 1);
}

TEST(ScoreTest, DeletionChargedToReferenceLanguage) {
  const auto r = Score(Toks("我 爱 book"), Toks("我 book"));
  EXPECT_EQ(r.man.deletions, 1);
  EXPECT_NEAR(r.cer_man, 50.0, 1e-12);
  EXPECT_EQ(r.wer_eng, 0.0);
  EXPECT_NEAR(r.ter, 100.0 / 3.0, 1e-12);
}

TEST(ScoreTest, CrossLanguageSubstitutionChargedToReference) {
  const auto r = Score(Toks("书"), Toks("book"));
  EXPECT_EQ(r.man.substitutions, 1);
  EXPECT_EQ(r.eng.errors(), 0);
  EXPECT_TRUE(r.eng_zero_denominator);
}

TEST(ScoreTest, InsertionChargedToHypothesisLanguage) {
  const auto r = Score(Toks("我"), Toks("我 book"));
  EXPECT_EQ(r.eng.insertions, 1);
  EXPECT_EQ(r.man.errors(), 0);
  EXPECT_TRUE(r.eng_zero_denominator);
  EXPECT_EQ(r.wer_eng, 0.0);
  EXPECT_EQ(r.ter, 100.0);
}

TEST(ScoreTest, EmptyReferenceIsDegenerate) {
  const auto r = Score(Toks(""), Toks("book"));
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(Score(Toks(""), Toks("")).degenerate);
}

TEST(ScoreTest, TerCanExceedHundred) {
  const auto r = Score(Toks("a"), Toks("b c d"));
  EXPECT_EQ(r.ter, 300.0);
}

TEST(ScoreTest, PoolingAddsCounts) {
  MetricsReport pooled = Score(Toks("我 爱 book"), Toks("我 book"));
  pooled += Score(Toks("tea 好"), Toks("tee 好 吗"));
  EXPECT_EQ(pooled.man.ref_tokens, 3);
  EXPECT_EQ(pooled.eng.ref_tokens, 2);
  EXPECT_EQ(pooled.total().errors(), 3);
  EXPECT_NEAR(pooled.ter, 60.0, 1e-12);
}

TEST(ScoreTest, MatchesBruteForceOnAllShortSequences) {
  const std::vector<ScoredToken> alphabet = {
      {"书", Lang::kMan}, {"茶", Lang::kMan}, {"book", Lang::kEng},
      {"tea", Lang::kEng}};
  // All sequences up to 3 tokens on each side.
  std::vector<std::vector<ScoredToken>> seqs = {{}};
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (seqs[i].size() == 3) continue;
    for (const auto& tok : alphabet) {
      auto s = seqs[i];
      s.push_back(tok);
      seqs.push_back(std::move(s));
    }
  }
  int checked = 0;
  for (const auto& ref : seqs) {
    for (const auto& hyp : seqs) {
      const auto r = Score(ref, hyp);
      const int dist = BruteForceDistance(ref, hyp);
      ASSERT_EQ(r.total().errors(), dist);
      ASSERT_EQ(r.total().ref_tokens, static_cast<long>(ref.size()));
      if (!ref.empty()) {
        ASSERT_NEAR(r.ter, 100.0 * dist / ref.size(), 1e-12);
      }
      ++checked;
    }
  }
  EXPECT_EQ(checked, 85 * 85);
}

TEST(AlignTest, BacktraceCoversBothSequences) {
  const auto ref = Toks("我 去 shop 了");
  const auto hyp = Toks("我 shopping 了 吗");
  const auto ops = Align(ref, hyp);
  long ref_used = 0;
  long hyp_used = 0;
  for (const AlignedOp& op : ops) {
    if (op.op != EditOp::kInsertion) ++ref_used;
    if (op.op != EditOp::kDeletion) ++hyp_used;
  }
  EXPECT_EQ(ref_used, 4);
  EXPECT_EQ(hyp_used, 4);
}

}  // namespace
}  // namespace cstt::metrics
