#include "cstt/trainer.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "test_util.h"

namespace cstt::trainer {
namespace {

namespace fs = std::filesystem;
using ag::Matrix;

class TrainerTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    synth::LanguageParams p;
    p.feature_dim = 6;
    lang_ = new synth::SyntheticLanguageSpec(synth::BuildLanguage(p));
  }
  static void TearDownTestSuite() { delete lang_; }

  static model::ModelConfig Tiny() {
    model::ModelConfig c = model::ModelConfig::Toy(lang_->vocab_size(),
                                                   lang_->phoneme_count);
    c.input_dim = 6;
    c.dim = 8;
    c.heads = 2;
    c.ff_dim = 12;
    c.joint_dim = 8;
    c.layers_speech = c.layers_shared = c.layers_extractor =
        c.layers_smoother = c.layers_predictor = 1;
    return c;
  }

  // Utterance over vocabulary entries [first, first + n).
  static synth::Utterance Utt(int first, int n, std::uint64_t seed,
                              const std::string& id) {
    std::vector<std::string> tokens;
    for (int i = 0; i < n; ++i) tokens.push_back(lang_->token_vocab[first + i]);
    synth::Utterance u = synth::SynthUtterance(tokens, *lang_, seed);
    u.id = id;
    return u;
  }

  static synth::TextOnlySample Text(int first, int n, std::uint64_t seed,
                                    const std::string& id) {
    const synth::Utterance u = Utt(first, n, seed, id);
    return {id, u.tokens, u.token_ids, u.phonemes};
  }

  static std::vector<double> Flatten(TransducerModel& m) {
    std::vector<double> out;
    for (auto* p : m.Parameters()) {
      out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
    }
    return out;
  }

  static std::vector<double> FlattenGrad(TransducerModel& m) {
    std::vector<double> out;
    for (auto* p : m.Parameters()) {
      out.insert(out.end(), p->grad.data(), p->grad.data() + p->grad.size());
    }
    return out;
  }

  static inline synth::SyntheticLanguageSpec* lang_ = nullptr;
  TransducerModel model{Tiny(), 2};
};

TEST(LrTest, WarmupThenExponentialDecay) {
  TrainConfig c;
  c.peak_lr = 1e-3;
  c.warmup_steps = 10;
  c.decay_rate = 0.5;
  EXPECT_EQ(LrAt(0, c), 0.0);
  EXPECT_DOUBLE_EQ(LrAt(5, c), 5e-4);
  EXPECT_DOUBLE_EQ(LrAt(10, c), 1e-3);
  EXPECT_DOUBLE_EQ(LrAt(12, c), 2.5e-4);
  EXPECT_THROW(LrAt(-1, c), std::invalid_argument);
}

TEST(TrainConfigTest, OverridesRoundTripAndValidate) {
  config::Tree tree;
  tree.put("train.mu", 1.5);
  tree.put("train.system", "topline");
  const TrainConfig c = TrainConfig().WithOverrides(tree);
  EXPECT_EQ(c.mu, 1.5);
  EXPECT_EQ(c.system, System::kTopline);
  config::Tree back;
  c.WriteTo(back);
  const TrainConfig again = TrainConfig().WithOverrides(back);
  EXPECT_EQ(again.mu, 1.5);
  EXPECT_EQ(again.tts_per_real, c.tts_per_real);
  tree.put("train.paired_batch", 0);
  EXPECT_THROW(TrainConfig().WithOverrides(tree), std::invalid_argument);
  EXPECT_THROW(ParseSystem("hybrid"), std::invalid_argument);
  for (System s : {System::kBaseline, System::kTopline, System::kCm}) {
    EXPECT_EQ(ParseSystem(SystemName(s)), s);
  }
}

TEST_F(TrainerTest, PairedLossWithoutTyingIsLinearInMu) {
  const synth::Utterance u = Utt(3, 3, 1, "a");
  xmodal::XModalConfig x;
  x.mode = xmodal::Mode::kNone;
  auto total = [&](double mu) {
    ag::Tape tape;
    ForwardContext ctx{tape};
    PairedTerms t = PairedLoss(ctx, model, u, x, mu);
    EXPECT_FALSE(t.cross.has_value());
    return std::make_tuple(t.total.scalar(), t.speech.scalar(), t.text.scalar());
  };
  for (double mu : {0.0, 1.0, 2.33, 7.0}) {
    const auto [l, ls, lt] = total(mu);
    EXPECT_NEAR(l, mu * ls + lt, 1e-9 * std::abs(l));
    const double h = 1e-4;
    const double dmu = (std::get<0>(total(mu + h)) - std::get<0>(total(mu - h))) / (2 * h);
    EXPECT_NEAR(dmu, ls, 1e-6 * std::max(1.0, ls));
  }
}

TEST_F(TrainerTest, PairedLossGradientIsWeightedSumOfPathGradients) {
  const synth::Utterance u = Utt(10, 2, 2, "b");
  xmodal::XModalConfig x;
  x.mode = xmodal::Mode::kNone;
  const double mu = 2.33;
  model.ZeroGrad();
  {
    ag::Tape tape;
    ForwardContext ctx{tape};
    tape.Backward(PairedLoss(ctx, model, u, x, mu).total);
  }
  const std::vector<double> joint = FlattenGrad(model);
  model.ZeroGrad();
  {
    ag::Tape tape;
    ForwardContext ctx{tape};
    tape.Backward(PairedLoss(ctx, model, u, x, mu).speech, mu);
  }
  {
    ag::Tape tape;
    ForwardContext ctx{tape};
    tape.Backward(PairedLoss(ctx, model, u, x, mu).text);
  }
  const std::vector<double> split = FlattenGrad(model);
  ASSERT_EQ(joint.size(), split.size());
  for (std::size_t i = 0; i < joint.size(); ++i) {
    ASSERT_NEAR(joint[i], split[i], 1e-9 * std::max(1.0, std::abs(joint[i])));
  }
}

TEST_F(TrainerTest, TyingTermsAddToTotal) {
  const synth::Utterance u = Utt(20, 3, 3, "c");
  for (auto mode : {xmodal::Mode::kMse, xmodal::Mode::kBiInfoNce}) {
    xmodal::XModalConfig x;
    x.mode = mode;
    ag::Tape tape;
    ForwardContext ctx{tape};
    PairedTerms t = PairedLoss(ctx, model, u, x, 2.0);
    ASSERT_TRUE(t.cross.has_value());
    EXPECT_NEAR(t.total.scalar(),
                2.0 * t.speech.scalar() + t.text.scalar() + t.cross->scalar(),
                1e-9 * t.total.scalar());
  }
  xmodal::XModalConfig swap;
  swap.mode = xmodal::Mode::kSwap;
  ag::Tape tape;
  ForwardContext ctx{tape};
  EXPECT_FALSE(PairedLoss(ctx, model, u, swap, 2.0).cross.has_value());
}

TEST_F(TrainerTest, TextOnlyLossLeavesSpeechEncoderUntouched) {
  const synth::TextOnlySample s = Text(5, 4, 4, "t");
  model.ZeroGrad();
  ag::Tape tape;
  ForwardContext ctx{tape};
  tape.Backward(TextOnlyLoss(ctx, model, s));
  for (auto* p : model.ParametersWithPrefix(TransducerModel::kSpeechEncoder)) {
    EXPECT_TRUE(p->grad.isZero(0.0)) << p->name;
  }
  bool extractor_moved = false;
  for (auto* p : model.ParametersWithPrefix(TransducerModel::kExtractor)) {
    extractor_moved |= !p->grad.isZero(0.0);
  }
  EXPECT_TRUE(extractor_moved);
}

TEST_F(TrainerTest, CompositeBatchValidation) {
  const synth::Utterance u = Utt(1, 2, 5, "u");
  const synth::TextOnlySample s = Text(1, 2, 5, "s");
  CompositeBatch b;
  EXPECT_THROW(b.Validate(System::kBaseline), std::invalid_argument);
  b.paired.push_back(&u);
  EXPECT_NO_THROW(b.Validate(System::kBaseline));
  EXPECT_THROW(b.Validate(System::kCm), std::invalid_argument);
  b.text_only.push_back(&s);
  EXPECT_NO_THROW(b.Validate(System::kCm));
  EXPECT_THROW(b.Validate(System::kTopline), std::invalid_argument);
}

TEST_F(TrainerTest, GradientsDoNotDependOnBatchOrder) {
  const synth::Utterance a = Utt(1, 3, 6, "a");
  const synth::Utterance b = Utt(30, 2, 7, "b");
  TrainConfig cfg;
  xmodal::XModalConfig x;
  auto grads = [&](std::vector<const synth::Utterance*> order) {
    model.ZeroGrad();
    CompositeBatch batch;
    batch.paired = std::move(order);
    AccumulateGradients(model, batch, cfg, x, 3, 0.5, 0.0);
    return FlattenGrad(model);
  };
  EXPECT_EQ(grads({&a, &b}), grads({&b, &a}));
  EXPECT_NE(SampleSeed(1, 3, "a"), SampleSeed(1, 4, "a"));
  EXPECT_NE(SampleSeed(1, 3, "a"), SampleSeed(2, 3, "a"));
}

TEST_F(TrainerTest, SplitAccumulationEqualsMergedBatch) {
  const synth::Utterance a = Utt(1, 3, 6, "a");
  const synth::Utterance b = Utt(30, 2, 7, "b");
  const synth::TextOnlySample s = Text(12, 3, 8, "s");
  const synth::TextOnlySample t = Text(40, 2, 9, "t");
  TrainConfig cfg;
  cfg.system = System::kCm;
  xmodal::XModalConfig x;
  model.ZeroGrad();
  CompositeBatch merged{{&a, &b}, {&s, &t}};
  AccumulateGradients(model, merged, cfg, x, 5, 0.5, 0.5);
  const std::vector<double> once = FlattenGrad(model);
  model.ZeroGrad();
  AccumulateGradients(model, {{&a}, {&s}}, cfg, x, 5, 0.5, 0.5);
  AccumulateGradients(model, {{&b}, {&t}}, cfg, x, 5, 0.5, 0.5);
  const std::vector<double> split = FlattenGrad(model);
  ASSERT_EQ(once.size(), split.size());
  for (std::size_t i = 0; i < once.size(); ++i) {
    ASSERT_NEAR(once[i], split[i], 1e-12 * std::max(1.0, std::abs(once[i])));
  }
}

TEST(AdamWTest, MatchesHandComputedSteps) {
  ag::Parameter p("w", (Matrix(1, 2) << 1.0, -2.0).finished());
  AdamW::Options o;
  o.beta1 = 0.9;
  o.beta2 = 0.99;
  o.epsilon = 1e-8;
  o.weight_decay = 0.1;
  AdamW opt({&p}, o);
  double w = 1.0, m = 0.0, v = 0.0;
  const double lr = 0.05;
  for (int t = 1; t <= 3; ++t) {
    const double g = 0.3 * t;
    p.grad.setConstant(g);
    opt.Step(lr);
    m = 0.9 * m + 0.1 * g;
    v = 0.99 * v + 0.01 * g * g;
    const double mhat = m / (1 - std::pow(0.9, t));
    const double vhat = v / (1 - std::pow(0.99, t));
    w = w * (1 - lr * 0.1) - lr * mhat / (std::sqrt(vhat) + 1e-8);
    EXPECT_NEAR(p.value(0, 0), w, 1e-14);
  }
  EXPECT_EQ(opt.steps(), 3);
}

TEST(AdamWTest, GlobalNorm) {
  ag::Parameter a("a", Matrix::Zero(1, 2));
  ag::Parameter b("b", Matrix::Zero(1, 1));
  a.grad << 3.0, 0.0;
  b.grad << 4.0;
  std::vector<ag::Parameter*> ps = {&a, &b};
  EXPECT_DOUBLE_EQ(GlobalGradNorm(ps), 5.0);
}

TEST_F(TrainerTest, StepClipsToThreshold) {
  const synth::Utterance u = Utt(1, 4, 8, "u");
  TrainConfig cfg;
  cfg.clip_norm = 1e-3;
  AdamW opt(model.Parameters(), {});
  CompositeBatch batch;
  batch.paired = {&u};
  const StepReport r = TrainStep(model, opt, batch, cfg, {}, 1);
  EXPECT_TRUE(r.clipped);
  EXPECT_GT(r.grad_norm, 1e-3);
  const auto params = model.Parameters();
  EXPECT_NEAR(GlobalGradNorm(params), 1e-3, 1e-12);
}

TEST_F(TrainerTest, NonFiniteLossAbortsWithoutUpdate) {
  synth::Utterance u = Utt(1, 2, 9, "u");
  u.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  AdamW opt(model.Parameters(), {});
  CompositeBatch batch;
  batch.paired = {&u};
  const std::vector<double> before = Flatten(model);
  const StepReport r = TrainStep(model, opt, batch, cfg, {}, 1);
  EXPECT_TRUE(r.aborted);
  EXPECT_FALSE(r.diagnostics.empty());
  EXPECT_EQ(Flatten(model), before);
  EXPECT_EQ(opt.steps(), 0);
  EXPECT_TRUE(r.ToJson()["aborted"].get<bool>());
}

TEST_F(TrainerTest, StepReportJsonKeys) {
  StepReport r;
  r.step = 4;
  const auto j = r.ToJson();
  for (const char* key :
       {"step", "lr", "loss_total", "loss_paired", "loss_speech", "loss_text",
        "loss_cm", "loss_text_only", "grad_norm", "clipped", "aborted"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_FALSE(j.contains("diagnostics"));
}

class BatchStreamTest : public TrainerTest {
 protected:
  void SetUp() override {
    for (int i = 0; i < 5; ++i) real.push_back(Utt(1 + i, 2, i, "r" + std::to_string(i)));
    for (int i = 0; i < 7; ++i) tts.push_back(Utt(1 + i, 2, 50 + i, "t" + std::to_string(i)));
    for (int i = 0; i < 3; ++i) text.push_back(Text(1 + i, 2, 90 + i, "x" + std::to_string(i)));
  }
  std::vector<synth::Utterance> real, tts;
  std::vector<synth::TextOnlySample> text;
};

TEST_F(BatchStreamTest, BaselineVisitsEveryUtteranceOncePerEpoch) {
  TrainConfig cfg;
  cfg.paired_batch = 5;
  BatchStream stream({real, text, tts}, cfg);
  for (int epoch = 0; epoch < 3; ++epoch) {
    const CompositeBatch b = stream.Next();
    std::set<const synth::Utterance*> seen(b.paired.begin(), b.paired.end());
    EXPECT_EQ(seen.size(), 5u);
    EXPECT_TRUE(b.text_only.empty());
    for (const auto* u : b.paired) EXPECT_EQ(u->origin, synth::Origin::kRealSim);
  }
}

TEST_F(BatchStreamTest, ToplineInterleavesRealAndTts) {
  TrainConfig cfg;
  cfg.system = System::kTopline;
  cfg.paired_batch = 4;
  cfg.tts_per_real = 2;
  BatchStream stream({real, text, tts}, cfg);
  std::vector<bool> is_real;
  for (int i = 0; i < 3; ++i) {
    for (const auto* u : stream.Next().paired) {
      is_real.push_back(u->id[0] == 'r');
    }
  }
  for (std::size_t i = 0; i < is_real.size(); ++i) {
    EXPECT_EQ(is_real[i], i % 3 == 0) << i;
  }
  EXPECT_THROW(BatchStream({real, text, {}}, cfg), std::invalid_argument);
}

TEST_F(BatchStreamTest, CmAddsTextOnlyBatch) {
  TrainConfig cfg;
  cfg.system = System::kCm;
  cfg.paired_batch = 2;
  cfg.textonly_batch = 3;
  BatchStream stream({real, text, tts}, cfg);
  const CompositeBatch b = stream.Next();
  EXPECT_EQ(b.paired.size(), 2u);
  EXPECT_EQ(b.text_only.size(), 3u);
  EXPECT_NO_THROW(b.Validate(System::kCm));
  EXPECT_THROW(BatchStream({real, {}, tts}, cfg), std::invalid_argument);
}

TEST_F(BatchStreamTest, SameSeedSameStream) {
  TrainConfig cfg;
  cfg.system = System::kCm;
  cfg.paired_batch = 3;
  BatchStream a({real, text, tts}, cfg), b({real, text, tts}, cfg);
  cfg.seed = 2;
  BatchStream c({real, text, tts}, cfg);
  bool differs = false;
  for (int i = 0; i < 6; ++i) {
    const CompositeBatch x = a.Next(), y = b.Next(), z = c.Next();
    EXPECT_EQ(x.paired, y.paired);
    EXPECT_EQ(x.text_only, y.text_only);
    differs |= x.paired != z.paired;
  }
  EXPECT_TRUE(differs);
}

TEST_F(BatchStreamTest, TrainingIsDeterministicAndLogsEveryStep) {
  TrainConfig cfg;
  cfg.system = System::kCm;
  cfg.steps = 6;
  cfg.warmup_steps = 2;
  cfg.peak_lr = 1e-2;
  cfg.paired_batch = 2;
  cfg.textonly_batch = 2;
  cfg.checkpoint_every = 2;
  const fs::path dir = fs::temp_directory_path() / "cstt_trainer_test";
  fs::remove_all(dir);
  TransducerModel m1(Tiny(), 5), m2(Tiny(), 5);
  long calls = 0;
  TrainOptions opt;
  opt.out_dir = dir.string();
  opt.on_step = [&](const StepReport& r) { EXPECT_EQ(r.step, ++calls); };
  const TrainResult r1 = Train(m1, {real, text, tts}, cfg, {}, opt);
  const TrainResult r2 = Train(m2, {real, text, tts}, cfg, {});
  EXPECT_EQ(Flatten(m1), Flatten(m2));
  EXPECT_EQ(r1.steps, 6);
  EXPECT_EQ(calls, 6);
  EXPECT_TRUE(r2.final_checkpoint.empty());
  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    EXPECT_EQ(nlohmann::json::parse(line)["step"].get<long>(), ++lines);
  }
  EXPECT_EQ(lines, 6);
  EXPECT_TRUE(fs::exists(dir / "checkpoint-0000002.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "checkpoint-0000004.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "checkpoint-0000006.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "final.ckpt"));
  EXPECT_EQ(Flatten(*model::LoadCheckpoint(r1.final_checkpoint)), Flatten(m1));
  fs::remove_all(dir);
}

TEST_F(BatchStreamTest, BaselineFitsTinyCorpus) {
  TrainConfig cfg;
  cfg.steps = 150;
  cfg.warmup_steps = 10;
  cfg.peak_lr = 1e-2;
  cfg.decay_rate = 1.0;
  cfg.paired_batch = 5;
  TransducerModel m(Tiny(), 6);
  double first = 0.0;
  TrainOptions opt;
  opt.on_step = [&](const StepReport& r) {
    if (r.step == 1) first = r.loss.total;
  };
  const TrainResult r = Train(m, {real, text, tts}, cfg, {}, opt);
  EXPECT_EQ(r.aborted_steps, 0);
  EXPECT_LT(r.last_loss.total, 0.5 * first);
}

}  // namespace
}  // namespace cstt::trainer
