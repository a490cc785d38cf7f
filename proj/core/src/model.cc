#include "cstt/model.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cstt/transducer.h"

namespace cstt::model {

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'S', 'T', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void WriteU32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t ReadU32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

ModelConfig ModelConfig::Toy(int vocab_size, int phoneme_count) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.phoneme_count = phoneme_count;
  return c;
}

ModelConfig ModelConfig::PaperScale(int vocab_size, int phoneme_count) {
  ModelConfig c;
  c.input_dim = 512;
  c.dim = 512;
  c.heads = 8;
  c.ff_dim = 2048;
  c.joint_dim = 512;
  c.layers_speech = 6;
  c.layers_shared = 12;
  c.layers_extractor = 4;
  c.layers_smoother = 2;
  c.layers_predictor = 2;
  c.dropout = 0.1;
  c.vocab_size = vocab_size;
  c.phoneme_count = phoneme_count;
  return c;
}

void ModelConfig::Validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("ModelConfig: " + msg);
  };
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    fail("dim must be a positive multiple of heads");
  }
  if (input_dim < 1 || ff_dim < 1 || joint_dim < 1) fail("widths must be >= 1");
  for (int n : {layers_speech, layers_shared, layers_extractor,
                layers_smoother, layers_predictor}) {
    if (n < 1) fail("all layer counts must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (phoneme_count < 1) fail("phoneme_count must be >= 1");
  if (blank_id < 0 || blank_id >= vocab_size) fail("blank_id out of range");
}

ModelConfig ModelConfig::WithOverrides(const config::Tree& tree,
                                       const std::string& section) const {
  ModelConfig c = *this;
  auto get = [&](const char* key, auto fallback) {
    return tree.get<decltype(fallback)>(section + "." + key, fallback);
  };
  c.input_dim = get("input_dim", c.input_dim);
  c.dim = get("dim", c.dim);
  c.heads = get("heads", c.heads);
  c.ff_dim = get("ff_dim", c.ff_dim);
  c.joint_dim = get("joint_dim", c.joint_dim);
  c.layers_speech = get("layers_speech", c.layers_speech);
  c.layers_shared = get("layers_shared", c.layers_shared);
  c.layers_extractor = get("layers_extractor", c.layers_extractor);
  c.layers_smoother = get("layers_smoother", c.layers_smoother);
  c.layers_predictor = get("layers_predictor", c.layers_predictor);
  c.dropout = get("dropout", c.dropout);
  c.vocab_size = get("vocab_size", c.vocab_size);
  c.phoneme_count = get("phoneme_count", c.phoneme_count);
  c.blank_id = get("blank_id", c.blank_id);
  return c;
}

void ModelConfig::WriteTo(config::Tree& tree,
                          const std::string& section) const {
  auto put = [&](const char* key, auto value) {
    tree.put(section + "." + key, value);
  };
  put("input_dim", input_dim);
  put("dim", dim);
  put("heads", heads);
  put("ff_dim", ff_dim);
  put("joint_dim", joint_dim);
  put("layers_speech", layers_speech);
  put("layers_shared", layers_shared);
  put("layers_extractor", layers_extractor);
  put("layers_smoother", layers_smoother);
  put("layers_predictor", layers_predictor);
  put("dropout", dropout);
  put("vocab_size", vocab_size);
  put("phoneme_count", phoneme_count);
  put("blank_id", blank_id);
}

int PhonemeSequence::total_frames() const {
  int total = 0;
  for (int d : durations) total += d;
  return total;
}

Matrix SinusoidalPositions(int length, int dim) {
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

Var Resample(Var emb, std::span<const int> durations,
             std::optional<int> expected_frames) {
  if (static_cast<Eigen::Index>(durations.size()) != emb.rows()) {
    throw std::invalid_argument(
        "resample: " + std::to_string(durations.size()) +
        " durations for " + std::to_string(emb.rows()) + " embeddings");
  }
  int total = 0;
  for (int d : durations) {
    if (d < 1) throw std::invalid_argument("resample: duration must be >= 1");
    total += d;
  }
  if (expected_frames && total != *expected_frames) {
    throw std::invalid_argument(
        "resample: durations sum to " + std::to_string(total) +
        " frames but the speech representation has " +
        std::to_string(*expected_frames));
  }
  return ag::RepeatRows(emb, durations);
}

TransducerModel::TransducerModel(const ModelConfig& config,
                                 std::uint64_t init_seed)
    : config_(config), init_rng_(init_seed) {
  config_.Validate();
  const int d = config_.dim;
  speech_input_ = NewLinear(std::string(kSpeechEncoder) + "input",
                            config_.input_dim, d);
  speech_encoder_ = NewStack(kSpeechEncoder, config_.layers_speech, false);

  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix phon(config_.phoneme_count, d);
  for (Eigen::Index i = 0; i < phon.size(); ++i) {
    phon.data()[i] = normal(init_rng_);
  }
  phoneme_embedding_ =
      NewParameter(std::string(kExtractor) + "embedding", std::move(phon));
  extractor_ = NewStack(kExtractor, config_.layers_extractor, false);
  smoother_ = NewStack(kSmoother, config_.layers_smoother, false);
  shared_encoder_ = NewStack(kSharedEncoder, config_.layers_shared, false);
  // Its inputs already carry positions from the speech encoder or smoother.
  shared_encoder_.positions = false;

  Matrix tok(config_.vocab_size, d);
  for (Eigen::Index i = 0; i < tok.size(); ++i) {
    tok.data()[i] = normal(init_rng_);
  }
  token_embedding_ =
      NewParameter(std::string(kPredictor) + "embedding", std::move(tok));
  predictor_ = NewStack(kPredictor, config_.layers_predictor, true);

  join_encoder_ =
      NewLinear(std::string(kJoiner) + "encoder", d, config_.joint_dim);
  join_predictor_ = NewLinear(std::string(kJoiner) + "predictor", d,
                              config_.joint_dim, /*bias=*/false);
  join_output_ = NewLinear(std::string(kJoiner) + "output", config_.joint_dim,
                           config_.vocab_size);
}

Parameter* TransducerModel::NewParameter(const std::string& name,
                                         Matrix value) {
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return params_.back().get();
}

TransducerModel::Linear TransducerModel::NewLinear(const std::string& name,
                                                   int in, int out,
                                                   bool bias) {
  const double bound = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> uni(-bound, bound);
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uni(init_rng_);
  Linear lin;
  lin.weight = NewParameter(name + ".weight", std::move(w));
  if (bias) lin.bias = NewParameter(name + ".bias", Matrix::Zero(1, out));
  return lin;
}

TransducerModel::Norm TransducerModel::NewNorm(const std::string& name,
                                               int dim) {
  Norm n;
  n.gamma = NewParameter(name + ".gamma", Matrix::Ones(1, dim));
  n.beta = NewParameter(name + ".beta", Matrix::Zero(1, dim));
  return n;
}

TransducerModel::Stack TransducerModel::NewStack(const std::string& prefix,
                                                 int layers, bool causal) {
  const int d = config_.dim;
  Stack stack;
  stack.causal = causal;
  for (int l = 0; l < layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    Layer layer;
    layer.attn_norm = NewNorm(p + "attn_norm", d);
    layer.wq = NewLinear(p + "attn.q", d, d);
    layer.wk = NewLinear(p + "attn.k", d, d);
    layer.wv = NewLinear(p + "attn.v", d, d);
    layer.wo = NewLinear(p + "attn.out", d, d);
    layer.ff_norm = NewNorm(p + "ff_norm", d);
    layer.ff1 = NewLinear(p + "ff.in", d, config_.ff_dim);
    layer.ff2 = NewLinear(p + "ff.out", config_.ff_dim, d);
    stack.layers.push_back(layer);
  }
  stack.final_norm = NewNorm(prefix + "final_norm", d);
  return stack;
}

Var TransducerModel::Apply(ForwardContext& ctx, const Linear& lin, Var x) {
  Var y = ag::MatMul(x, ctx.tape.Param(*lin.weight));
  if (lin.bias != nullptr) y = ag::AddRow(y, ctx.tape.Param(*lin.bias));
  return y;
}

Var TransducerModel::Apply(ForwardContext& ctx, const Norm& norm, Var x) {
  return ag::LayerNorm(x, ctx.tape.Param(*norm.gamma),
                       ctx.tape.Param(*norm.beta));
}

Var TransducerModel::Apply(ForwardContext& ctx, const Layer& layer, Var x,
                           bool causal) {
  Var h = Apply(ctx, layer.attn_norm, x);
  Var attn = ag::MultiHeadAttention(Apply(ctx, layer.wq, h),
                                    Apply(ctx, layer.wk, h),
                                    Apply(ctx, layer.wv, h), config_.heads,
                                    causal);
  attn = Apply(ctx, layer.wo, attn);
  x = ag::Add(x, ag::Dropout(attn, config_.dropout, ctx.dropout_rng));

  h = Apply(ctx, layer.ff_norm, x);
  Var ff = Apply(ctx, layer.ff2, ag::Relu(Apply(ctx, layer.ff1, h)));
  return ag::Add(x, ag::Dropout(ff, config_.dropout, ctx.dropout_rng));
}

Var TransducerModel::Apply(ForwardContext& ctx, const Stack& stack, Var x) {
  if (stack.positions) {
    x = ag::AddConstant(
        x, SinusoidalPositions(static_cast<int>(x.rows()), config_.dim));
  }
  for (const Layer& layer : stack.layers) {
    x = Apply(ctx, layer, x, stack.causal);
  }
  return Apply(ctx, stack.final_norm, x);
}

Representation TransducerModel::SpeechEncode(ForwardContext& ctx,
                                             const SpeechSequence& speech) {
  if (speech.length() < 1) {
    throw std::invalid_argument("speech_encode: empty sequence");
  }
  if (speech.features.cols() != config_.input_dim) {
    throw std::invalid_argument(
        "speech_encode: feature width " +
        std::to_string(speech.features.cols()) + " != input_dim " +
        std::to_string(config_.input_dim));
  }
  Var x = Apply(ctx, speech_input_, ctx.tape.Constant(speech.features));
  return {Apply(ctx, speech_encoder_, x), Modality::kSpeech};
}

Representation TransducerModel::ExtractTextEmbedding(
    ForwardContext& ctx, const PhonemeSequence& phonemes) {
  if (phonemes.ids.empty()) {
    throw std::invalid_argument("extract_text_embedding: empty sequence");
  }
  for (int id : phonemes.ids) {
    if (id < 0 || id >= config_.phoneme_count) {
      throw std::out_of_range("extract_text_embedding: phoneme id " +
                              std::to_string(id) + " outside [0, " +
                              std::to_string(config_.phoneme_count) + ")");
    }
  }
  Var x = ag::GatherRows(ctx.tape.Param(*phoneme_embedding_), phonemes.ids);
  return {Apply(ctx, extractor_, x), Modality::kText};
}

Representation TransducerModel::Smooth(ForwardContext& ctx, Var upsampled) {
  if (upsampled.rows() < 1) throw std::invalid_argument("smooth: empty input");
  return {Apply(ctx, smoother_, upsampled), Modality::kText};
}

Representation TransducerModel::TextEncode(ForwardContext& ctx,
                                           const PhonemeSequence& phonemes,
                                           std::optional<int> expected_frames) {
  Representation emb = ExtractTextEmbedding(ctx, phonemes);
  return Smooth(ctx, Resample(emb.matrix, phonemes.durations,
                              expected_frames));
}

Var TransducerModel::SharedEncode(ForwardContext& ctx,
                                  const Representation& rep) {
  return Apply(ctx, shared_encoder_, rep.matrix);
}

Var TransducerModel::Predict(ForwardContext& ctx,
                             std::span<const int> prefix) {
  std::vector<int> ids;
  ids.reserve(prefix.size() + 1);
  ids.push_back(config_.blank_id);
  for (int y : prefix) {
    if (y == config_.blank_id || y < 0 || y >= config_.vocab_size) {
      throw std::invalid_argument("predict: invalid prefix token " +
                                  std::to_string(y));
    }
    ids.push_back(y);
  }
  Var x = ag::GatherRows(ctx.tape.Param(*token_embedding_), ids);
  return Apply(ctx, predictor_, x);
}

Var TransducerModel::Join(ForwardContext& ctx, Var encoder_out,
                          Var predictor_out) {
  Var e = Apply(ctx, join_encoder_, encoder_out);
  Var p = Apply(ctx, join_predictor_, predictor_out);
  return Apply(ctx, join_output_, ag::Tanh(ag::PairwiseRowSum(e, p)));
}

Var TransducerModel::PredictAndJoin(ForwardContext& ctx, Var encoder_out,
                                    std::span<const int> target) {
  return Join(ctx, encoder_out, Predict(ctx, target));
}

std::vector<int> TransducerModel::Decode(const SpeechSequence& speech,
                                         int max_symbols_per_frame,
                                         std::set<const Parameter*>* touched) {
  auto record = [&](const ag::Tape& tape) {
    if (touched == nullptr) return;
    for (Parameter* p : tape.Parameters()) touched->insert(p);
  };
  ag::Tape enc_tape;
  ForwardContext enc_ctx{enc_tape};
  Var enc = SharedEncode(enc_ctx, SpeechEncode(enc_ctx, speech));
  // Both joint projections are applied before search, so the joiner only
  // adds, squashes and projects to the vocabulary.
  const Matrix enc_proj = Apply(enc_ctx, join_encoder_, enc).value();
  record(enc_tape);

  transducer::PredictorFn predictor = [&](std::span<const int> prefix) {
    ag::Tape tape;
    ForwardContext ctx{tape};
    Var pred = Predict(ctx, prefix);
    Var proj = Apply(ctx, join_predictor_, pred);
    record(tape);
    return ag::RowVector(proj.value().row(proj.rows() - 1));
  };
  transducer::JoinerFn joiner = [&](const ag::RowVector& frame,
                                    const ag::RowVector& pred) {
    ag::Tape tape;
    ForwardContext ctx{tape};
    Matrix hidden = (frame + pred).array().tanh().matrix();
    Var logits = Apply(ctx, join_output_, tape.Constant(std::move(hidden)));
    record(tape);
    return ag::RowVector(logits.value().row(0));
  };
  return transducer::GreedyDecode(enc_proj, predictor, joiner,
                                  config_.blank_id, max_symbols_per_frame);
}

std::vector<Parameter*> TransducerModel::Parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> TransducerModel::ParametersWithPrefix(
    const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p.get());
  }
  return out;
}

Parameter* TransducerModel::FindParameter(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::size_t TransducerModel::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void TransducerModel::ZeroGrad() {
  for (auto& p : params_) p->ZeroGrad();
}

void SaveCheckpoint(TransducerModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  WriteU32(out, kCheckpointVersion);
  config::Tree tree;
  model.config().WriteTo(tree);
  const std::string cfg = config::Serialize(tree);
  WriteU32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = model.Parameters();
  WriteU32(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    WriteU32(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    WriteU32(out, static_cast<std::uint32_t>(p->value.rows()));
    WriteU32(out, static_cast<std::uint32_t>(p->value.cols()));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("error writing checkpoint " + path);
}

std::unique_ptr<TransducerModel> LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path + " is not a checkpoint");
  }
  if (ReadU32(in) != kCheckpointVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version");
  }
  std::string cfg(ReadU32(in), '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const ModelConfig config = ModelConfig{}.WithOverrides(config::Parse(cfg));
  auto model = std::make_unique<TransducerModel>(config, 0);
  const std::uint32_t count = ReadU32(in);
  if (count != model->Parameters().size()) {
    throw std::runtime_error(path + ": parameter count mismatch");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(ReadU32(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint32_t rows = ReadU32(in);
    const std::uint32_t cols = ReadU32(in);
    Parameter* p = model->FindParameter(name);
    if (p == nullptr || p->value.rows() != rows || p->value.cols() != cols) {
      throw std::runtime_error(path + ": unexpected parameter " + name);
    }
    in.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated at " + name);
  }
  return model;
}

}  // namespace cstt::model
