#include "cstt/model.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cstt/transducer.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace cstt::model {
namespace {

using testing::RandomMatrix;

ModelConfig Tiny() {
  ModelConfig c = ModelConfig::Toy(7, 5);
  c.input_dim = 6;
  c.dim = 8;
  c.heads = 2;
  c.ff_dim = 12;
  c.joint_dim = 8;
  c.layers_speech = c.layers_shared = c.layers_extractor = c.layers_smoother =
      c.layers_predictor = 1;
  return c;
}

PhonemeSequence Phones(std::vector<int> ids, std::vector<int> durations) {
  return {std::move(ids), std::move(durations)};
}

TEST(ResampleTest, RepeatsRowsByDuration) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 20)(rng);
    std::vector<int> durations(n);
    for (int& d : durations) d = std::uniform_int_distribution<int>(1, 5)(rng);
    const Matrix emb = RandomMatrix(n, 3, rng());
    ag::Tape tape;
    const Matrix out = Resample(tape.Constant(emb), durations).value();
    int row = 0;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < durations[i]; ++k, ++row) {
        ASSERT_EQ(out.row(row), emb.row(i));
      }
    }
    ASSERT_EQ(out.rows(), row);
  }
}

TEST(ResampleTest, GradientSumsRepeatedRows) {
  const std::vector<int> durations = {3, 1, 2};
  const Matrix emb = RandomMatrix(3, 2, 4);
  ag::Parameter p("emb", emb);
  p.ZeroGrad();
  ag::Tape tape;
  tape.Backward(ag::Sum(Resample(tape.Param(p), durations)));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(p.grad(i, 0), durations[i]);
    EXPECT_EQ(p.grad(i, 1), durations[i]);
  }
}

TEST(ResampleTest, RejectsBadDurations) {
  ag::Tape tape;
  Var emb = tape.Constant(RandomMatrix(2, 2, 5));
  EXPECT_THROW(Resample(emb, std::vector<int>{1}), std::invalid_argument);
  EXPECT_THROW(Resample(emb, std::vector<int>{1, 0}), std::invalid_argument);
  EXPECT_THROW(Resample(emb, std::vector<int>{2, 2}, 5), std::invalid_argument);
  EXPECT_EQ(Resample(emb, std::vector<int>{2, 3}, 5).rows(), 5);
}

TEST(SinusoidalPositionsTest, KnownValues) {
  const Matrix pe = SinusoidalPositions(3, 4);
  EXPECT_EQ(pe(0, 0), 0.0);
  EXPECT_EQ(pe(0, 1), 1.0);
  EXPECT_NEAR(pe(2, 0), std::sin(2.0), 1e-15);
  EXPECT_NEAR(pe(2, 3), std::cos(2.0 / 100.0), 1e-15);
}

TEST(ModelConfigTest, Validation) {
  ModelConfig c = Tiny();
  EXPECT_NO_THROW(c.Validate());
  c.heads = 3;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = Tiny();
  c.layers_smoother = 0;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = Tiny();
  c.blank_id = 7;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
}

TEST(ModelConfigTest, OverridesRoundTrip) {
  config::Tree tree;
  Tiny().WriteTo(tree);
  EXPECT_EQ(ModelConfig{}.WithOverrides(tree), Tiny());
  tree.put("model.dim", 16);
  EXPECT_EQ(Tiny().WithOverrides(tree).dim, 16);
}

TEST(ModelConfigTest, PaperScaleLayerCounts) {
  const ModelConfig c = ModelConfig::PaperScale(100, 40);
  EXPECT_EQ(c.dim, 512);
  EXPECT_EQ(c.heads, 8);
  EXPECT_EQ(c.layers_speech, 6);
  EXPECT_EQ(c.layers_shared, 12);
  EXPECT_EQ(c.layers_extractor, 4);
  EXPECT_NO_THROW(c.Validate());
}

class ModelTest : public ::testing::Test {
 protected:
  TransducerModel model{Tiny(), 3};
  SpeechSequence speech{RandomMatrix(9, 6, 7)};
  PhonemeSequence phones = Phones({1, 4, 0, 2}, {2, 3, 1, 3});
};

TEST_F(ModelTest, Shapes) {
  ag::Tape tape;
  ForwardContext ctx{tape};
  const Representation es = model.SpeechEncode(ctx, speech);
  EXPECT_EQ(es.matrix.rows(), 9);
  EXPECT_EQ(es.matrix.cols(), 8);
  EXPECT_EQ(es.modality, Modality::kSpeech);
  const Representation et = model.TextEncode(ctx, phones, 9);
  EXPECT_EQ(et.matrix.rows(), es.matrix.rows());
  EXPECT_EQ(et.modality, Modality::kText);
  const std::vector<int> y = {3, 5};
  const Var pred = model.Predict(ctx, y);
  EXPECT_EQ(pred.rows(), 3);
  const Var logits = model.Join(ctx, model.SharedEncode(ctx, es), pred);
  EXPECT_EQ(logits.rows(), 27);
  EXPECT_EQ(logits.cols(), 7);
}

TEST_F(ModelTest, RejectsBadInputs) {
  ag::Tape tape;
  ForwardContext ctx{tape};
  EXPECT_THROW(model.SpeechEncode(ctx, {RandomMatrix(4, 5, 1)}), std::invalid_argument);
  EXPECT_THROW(model.ExtractTextEmbedding(ctx, Phones({5}, {1})), std::out_of_range);
  EXPECT_THROW(model.TextEncode(ctx, phones, 8), std::invalid_argument);
  const std::vector<int> blank = {0};
  EXPECT_THROW(model.Predict(ctx, blank), std::invalid_argument);
}

TEST_F(ModelTest, PredictorIsCausal) {
  ag::Tape tape;
  ForwardContext ctx{tape};
  const std::vector<int> a = {3, 5, 1, 2};
  const std::vector<int> b = {3, 5, 6, 6};
  const Matrix pa = model.Predict(ctx, a).value();
  const Matrix pb = model.Predict(ctx, b).value();
  // Row u sees [blank, y_1..y_u]; the prefixes agree up to u = 2.
  EXPECT_TRUE(pa.topRows(3).isApprox(pb.topRows(3), 1e-14));
  EXPECT_FALSE(pa.row(3).isApprox(pb.row(3)));
}

TEST_F(ModelTest, SharedEncoderIgnoresModalityTag) {
  ag::Tape tape;
  ForwardContext ctx{tape};
  Var x = tape.Constant(RandomMatrix(5, 8, 11));
  const Matrix a = model.SharedEncode(ctx, {x, Modality::kSpeech}).value();
  const Matrix b = model.SharedEncode(ctx, {x, Modality::kText}).value();
  EXPECT_EQ(a, b);
}

TEST_F(ModelTest, SharedEncoderIsPermutationEquivariant) {
  // No positions are added there, so reordering frames reorders outputs.
  ag::Tape tape;
  ForwardContext ctx{tape};
  const Matrix x = RandomMatrix(5, 8, 12);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  Matrix px(5, 8);
  for (int i = 0; i < 5; ++i) px.row(i) = x.row(perm[i]);
  const Matrix a = model.SharedEncode(ctx, {tape.Constant(x), Modality::kSpeech}).value();
  const Matrix b = model.SharedEncode(ctx, {tape.Constant(px), Modality::kSpeech}).value();
  for (int i = 0; i < 5; ++i) {
    EXPECT_TRUE(b.row(i).isApprox(a.row(perm[i]), 1e-12)) << i;
  }
}

TEST_F(ModelTest, EvaluationIsDeterministicAndDropoutIsSeeded) {
  auto run = [&](std::mt19937_64* rng) {
    ag::Tape tape;
    ForwardContext ctx{tape, rng};
    return model.SpeechEncode(ctx, speech).matrix.value();
  };
  EXPECT_EQ(run(nullptr), run(nullptr));
  std::mt19937_64 r1(5), r2(5), r3(6);
  const Matrix a = run(&r1);
  EXPECT_EQ(a, run(&r2));
  EXPECT_FALSE(a.isApprox(run(&r3)));
  EXPECT_FALSE(a.isApprox(run(nullptr)));
}

TEST_F(ModelTest, SameSeedSameInitialisation) {
  TransducerModel other(Tiny(), 3);
  TransducerModel different(Tiny(), 4);
  const auto pa = model.Parameters();
  const auto pb = other.Parameters();
  const auto pc = different.Parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
    any_diff |= pa[i]->value != pc[i]->value;
  }
  EXPECT_TRUE(any_diff);
}

TEST_F(ModelTest, ParameterNamesCarryModulePrefixes) {
  const char* prefixes[] = {
      TransducerModel::kSpeechEncoder, TransducerModel::kExtractor,
      TransducerModel::kSmoother,      TransducerModel::kSharedEncoder,
      TransducerModel::kPredictor,     TransducerModel::kJoiner};
  std::size_t total = 0;
  for (const char* p : prefixes) {
    const auto group = model.ParametersWithPrefix(p);
    EXPECT_FALSE(group.empty()) << p;
    total += group.size();
  }
  EXPECT_EQ(total, model.Parameters().size());
  std::set<std::string> names;
  for (const auto* p : model.Parameters()) EXPECT_TRUE(names.insert(p->name).second);
  EXPECT_NE(model.FindParameter("joiner.output.weight"), nullptr);
  EXPECT_EQ(model.FindParameter("nope"), nullptr);
}

TEST_F(ModelTest, DecodeReadsNoTextPathParameters) {
  std::set<const ag::Parameter*> touched;
  model.Decode(speech, 3, &touched);
  for (const ag::Parameter* p : touched) {
    EXPECT_FALSE(p->name.starts_with(TransducerModel::kExtractor)) << p->name;
    EXPECT_FALSE(p->name.starts_with(TransducerModel::kSmoother)) << p->name;
  }
  for (const char* needed :
       {"speech_encoder.input.weight", "shared_encoder.final_norm.gamma",
        "predictor.embedding", "joiner.output.weight"}) {
    EXPECT_TRUE(touched.count(model.FindParameter(needed))) << needed;
  }
}

TEST_F(ModelTest, DecodeMatchesGreedySearchOverJoinGrid) {
  // Reference search through the training-graph Predict/Join.
  ag::Tape tape;
  ForwardContext ctx{tape};
  const Var enc = model.SharedEncode(ctx, model.SpeechEncode(ctx, speech));
  std::vector<int> hyp;
  for (int t = 0; t < enc.rows(); ++t) {
    for (int n = 0; n < 3; ++n) {
      const Var frame = tape.Constant(enc.value().row(t));
      const Var pred = model.Predict(ctx, hyp);
      const Matrix logits = model.Join(ctx, frame, pred).value();
      Eigen::Index best = 0;
      logits.row(logits.rows() - 1).maxCoeff(&best);
      if (best == 0) break;
      hyp.push_back(static_cast<int>(best));
    }
  }
  EXPECT_EQ(model.Decode(speech), hyp);
}

TEST_F(ModelTest, WholeModelGradientMatchesFiniteDifferences) {
  const std::vector<int> y = {2, 5};
  auto loss = [&] {
    ag::Tape tape;
    ForwardContext ctx{tape};
    Var enc = model.SharedEncode(ctx, model.SpeechEncode(ctx, speech));
    Var l = transducer::TransducerLoss(model.PredictAndJoin(ctx, enc, y), 9, y, 0);
    return std::make_pair(l.scalar(), 0);
  };
  model.ZeroGrad();
  {
    ag::Tape tape;
    ForwardContext ctx{tape};
    Var enc = model.SharedEncode(ctx, model.SpeechEncode(ctx, speech));
    tape.Backward(transducer::TransducerLoss(model.PredictAndJoin(ctx, enc, y), 9, y, 0));
  }
  for (const char* name :
       {"speech_encoder.input.weight", "speech_encoder.layer0.attn.q.weight",
        "shared_encoder.layer0.ff.in.bias", "shared_encoder.final_norm.gamma",
        "predictor.embedding", "predictor.layer0.attn.k.weight",
        "joiner.predictor.weight", "joiner.output.bias"}) {
    ag::Parameter* p = model.FindParameter(name);
    ASSERT_NE(p, nullptr) << name;
    const Matrix analytic = p->grad;
    Matrix fd(p->value.rows(), p->value.cols());
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double up = loss().first;
      p->value.data()[i] = orig - h;
      const double down = loss().first;
      p->value.data()[i] = orig;
      fd.data()[i] = (up - down) / (2 * h);
    }
    EXPECT_LT(testing::MaxRelError(analytic, fd, 1e-4), 1e-4) << name;
  }
}

TEST_F(ModelTest, SpeechLossLeavesTextPathGradientsZero) {
  model.ZeroGrad();
  ag::Tape tape;
  ForwardContext ctx{tape};
  const std::vector<int> y = {1};
  Var enc = model.SharedEncode(ctx, model.SpeechEncode(ctx, speech));
  tape.Backward(transducer::TransducerLoss(model.PredictAndJoin(ctx, enc, y), 9, y, 0));
  for (auto* p : model.ParametersWithPrefix(TransducerModel::kExtractor)) {
    EXPECT_TRUE(p->grad.isZero(0.0)) << p->name;
  }
  for (auto* p : model.ParametersWithPrefix(TransducerModel::kSmoother)) {
    EXPECT_TRUE(p->grad.isZero(0.0)) << p->name;
  }
}

TEST_F(ModelTest, CheckpointRoundTrip) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "cstt_model_test.ckpt").string();
  model.FindParameter("joiner.output.bias")->value.setConstant(0.25);
  SaveCheckpoint(model, path);
  auto loaded = LoadCheckpoint(path);
  EXPECT_EQ(loaded->config(), model.config());
  const auto a = model.Parameters();
  const auto b = loaded->Parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }
  EXPECT_EQ(loaded->Decode(speech), model.Decode(speech));
  std::filesystem::remove(path);
}

TEST(CheckpointTest, RejectsForeignFiles) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "cstt_not_a_ckpt").string();
  { std::ofstream(path) << "hello"; }
  EXPECT_THROW(LoadCheckpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace cstt::model
