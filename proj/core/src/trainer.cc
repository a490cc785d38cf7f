#include "cstt/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cstt/io.h"
#include "cstt/transducer.h"

namespace cstt::trainer {

namespace fs = std::filesystem;

namespace {

std::uint64_t Fnv1a(const std::string& s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

Var TransducerOnRepresentation(ForwardContext& ctx, TransducerModel& model,
                               const model::Representation& rep,
                               const std::vector<int>& target) {
  Var enc = model.SharedEncode(ctx, rep);
  Var logits = model.PredictAndJoin(ctx, enc, target);
  return transducer::TransducerLoss(logits, static_cast<int>(enc.rows()),
                                    target, model.config().blank_id);
}

bool Finite(const LossComponents& c) {
  return std::isfinite(c.speech) && std::isfinite(c.text) &&
         std::isfinite(c.cross) && std::isfinite(c.text_only) &&
         std::isfinite(c.total);
}

std::string Describe(const LossComponents& c) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "L_s=%g L_t=%g L_CM=%g L_paired=%g L_text=%g total=%g",
                c.speech, c.text, c.cross, c.paired, c.text_only, c.total);
  return buf;
}

}  // namespace

System ParseSystem(const std::string& name) {
  if (name == "baseline") return System::kBaseline;
  if (name == "topline") return System::kTopline;
  if (name == "cm") return System::kCm;
  throw std::invalid_argument("unknown system '" + name +
                              "' (expected baseline|topline|cm)");
}

const char* SystemName(System system) {
  switch (system) {
    case System::kBaseline:
      return "baseline";
    case System::kTopline:
      return "topline";
    case System::kCm:
      return "cm";
  }
  return "baseline";
}

void TrainConfig::Validate() const {
  if (!(mu > 0.0)) throw std::invalid_argument("train.mu must be > 0");
  if (warmup_steps < 1) {
    throw std::invalid_argument("train.warmup_steps must be >= 1");
  }
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) {
    throw std::invalid_argument("train.decay_rate must lie in (0, 1]");
  }
  if (steps < 0) throw std::invalid_argument("train.steps must be >= 0");
  if (paired_batch < 1) {
    throw std::invalid_argument("train.paired_batch must be >= 1");
  }
  if (system == System::kCm && textonly_batch < 1) {
    throw std::invalid_argument("train.textonly_batch must be >= 1 for cm");
  }
  if (clip_norm < 0.0) throw std::invalid_argument("train.clip_norm < 0");
  if (tts_per_real < 0) throw std::invalid_argument("train.tts_per_real < 0");
  if (checkpoint_every < 0) {
    throw std::invalid_argument("train.checkpoint_every < 0");
  }
}

TrainConfig TrainConfig::WithOverrides(const config::Tree& tree,
                                       const std::string& section) const {
  TrainConfig c = *this;
  const std::string p = section + ".";
  c.mu = tree.get(p + "mu", c.mu);
  c.peak_lr = tree.get(p + "peak_lr", c.peak_lr);
  c.warmup_steps = tree.get(p + "warmup_steps", c.warmup_steps);
  c.decay_rate = tree.get(p + "decay_rate", c.decay_rate);
  c.steps = tree.get(p + "steps", c.steps);
  c.seed = tree.get(p + "seed", c.seed);
  if (auto s = tree.get_optional<std::string>(p + "system")) {
    c.system = ParseSystem(*s);
  }
  c.paired_batch = tree.get(p + "paired_batch", c.paired_batch);
  c.textonly_batch = tree.get(p + "textonly_batch", c.textonly_batch);
  c.clip_norm = tree.get(p + "clip_norm", c.clip_norm);
  c.beta1 = tree.get(p + "beta1", c.beta1);
  c.beta2 = tree.get(p + "beta2", c.beta2);
  c.epsilon = tree.get(p + "epsilon", c.epsilon);
  c.weight_decay = tree.get(p + "weight_decay", c.weight_decay);
  c.tts_per_real = tree.get(p + "tts_per_real", c.tts_per_real);
  c.checkpoint_every = tree.get(p + "checkpoint_every", c.checkpoint_every);
  c.Validate();
  return c;
}

void TrainConfig::WriteTo(config::Tree& tree,
                          const std::string& section) const {
  const std::string p = section + ".";
  tree.put(p + "mu", mu);
  tree.put(p + "peak_lr", peak_lr);
  tree.put(p + "warmup_steps", warmup_steps);
  tree.put(p + "decay_rate", decay_rate);
  tree.put(p + "steps", steps);
  tree.put(p + "seed", seed);
  tree.put(p + "system", SystemName(system));
  tree.put(p + "paired_batch", paired_batch);
  tree.put(p + "textonly_batch", textonly_batch);
  tree.put(p + "clip_norm", clip_norm);
  tree.put(p + "beta1", beta1);
  tree.put(p + "beta2", beta2);
  tree.put(p + "epsilon", epsilon);
  tree.put(p + "weight_decay", weight_decay);
  tree.put(p + "tts_per_real", tts_per_real);
  tree.put(p + "checkpoint_every", checkpoint_every);
}

double LrAt(long step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("LrAt: negative step");
  if (step <= cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  return cfg.peak_lr *
         std::pow(cfg.decay_rate, static_cast<double>(step - cfg.warmup_steps));
}

void CompositeBatch::Validate(System system) const {
  if (paired.empty()) {
    throw std::invalid_argument("composite batch: empty paired mini-batch");
  }
  if (system == System::kCm && text_only.empty()) {
    throw std::invalid_argument(
        "composite batch: cm needs a non-empty text-only mini-batch");
  }
  if (system != System::kCm && !text_only.empty()) {
    throw std::invalid_argument(std::string("composite batch: ") +
                                SystemName(system) +
                                " takes no text-only mini-batch");
  }
}

Var SpeechLoss(ForwardContext& ctx, TransducerModel& model,
               const Utterance& utt) {
  return TransducerOnRepresentation(
      ctx, model, model.SpeechEncode(ctx, utt.speech()), utt.token_ids);
}

PairedTerms PairedLoss(ForwardContext& ctx, TransducerModel& model,
                       const Utterance& utt, const xmodal::XModalConfig& xcfg,
                       double mu, std::uint64_t draw) {
  model::Representation e_s = model.SpeechEncode(ctx, utt.speech());
  model::Representation e_t =
      model.TextEncode(ctx, utt.phonemes, static_cast<int>(utt.features.rows()));

  PairedTerms terms;
  switch (xcfg.mode) {
    case xmodal::Mode::kNone:
      break;
    case xmodal::Mode::kMse:
      terms.cross = xmodal::MseLoss(e_t.matrix, e_s.matrix);
      break;
    case xmodal::Mode::kBiInfoNce:
      terms.cross = xmodal::BiInfoNceLoss(e_t.matrix, e_s.matrix, xcfg).loss;
      break;
    case xmodal::Mode::kSwap: {
      xmodal::SwapResult swapped =
          xmodal::ModalitySwap(e_t.matrix, e_s.matrix, xcfg, draw);
      e_t.matrix = swapped.e_t;
      e_s.matrix = swapped.e_s;
      break;
    }
  }
  terms.speech = TransducerOnRepresentation(ctx, model, e_s, utt.token_ids);
  terms.text = TransducerOnRepresentation(ctx, model, e_t, utt.token_ids);
  terms.total = ag::Add(ag::Scale(terms.speech, mu), terms.text);
  if (terms.cross) terms.total = ag::Add(terms.total, *terms.cross);
  return terms;
}

Var TextOnlyLoss(ForwardContext& ctx, TransducerModel& model,
                 const TextOnlySample& sample) {
  return TransducerOnRepresentation(
      ctx, model, model.TextEncode(ctx, sample.phonemes), sample.token_ids);
}

nlohmann::json StepReport::ToJson() const {
  nlohmann::json j = {{"step", step},
                      {"lr", lr},
                      {"loss_total", loss.total},
                      {"loss_paired", loss.paired},
                      {"loss_speech", loss.speech},
                      {"loss_text", loss.text},
                      {"loss_cm", loss.cross},
                      {"loss_text_only", loss.text_only},
                      {"grad_norm", grad_norm},
                      {"clipped", clipped},
                      {"aborted", aborted}};
  if (!diagnostics.empty()) j["diagnostics"] = diagnostics;
  return j;
}

std::uint64_t SampleSeed(std::uint64_t seed, long step,
                         const std::string& id) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  h = Fnv1a(std::to_string(seed) + ":" + std::to_string(step) + ":", h);
  return Fnv1a(id, h);
}

LossComponents AccumulateGradients(TransducerModel& model,
                                   const CompositeBatch& batch,
                                   const TrainConfig& cfg,
                                   const xmodal::XModalConfig& xcfg, long step,
                                   double paired_weight, double text_weight) {
  LossComponents out;
  const bool both_paths = cfg.system == System::kCm;
  for (const Utterance* utt : batch.paired) {
    const std::uint64_t seed = SampleSeed(cfg.seed, step, utt->id);
    std::mt19937_64 rng(seed);
    ag::Tape tape;
    ForwardContext ctx{tape, &rng};
    if (both_paths) {
      PairedTerms t = PairedLoss(ctx, model, *utt, xcfg, cfg.mu, seed);
      out.speech += paired_weight * t.speech.scalar();
      out.text += paired_weight * t.text.scalar();
      if (t.cross) out.cross += paired_weight * t.cross->scalar();
      out.paired += paired_weight * t.total.scalar();
      if (std::isfinite(t.total.scalar())) tape.Backward(t.total, paired_weight);
    } else {
      Var l = SpeechLoss(ctx, model, *utt);
      out.speech += paired_weight * l.scalar();
      out.paired += paired_weight * l.scalar();
      if (std::isfinite(l.scalar())) tape.Backward(l, paired_weight);
    }
  }
  for (const TextOnlySample* sample : batch.text_only) {
    std::mt19937_64 rng(SampleSeed(cfg.seed, step, sample->id));
    ag::Tape tape;
    ForwardContext ctx{tape, &rng};
    Var l = TextOnlyLoss(ctx, model, *sample);
    out.text_only += text_weight * l.scalar();
    if (std::isfinite(l.scalar())) tape.Backward(l, text_weight);
  }
  out.total = out.paired + out.text_only;
  return out;
}

AdamW::AdamW(std::vector<Parameter*> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (Parameter* p : params_) {
    m_.push_back(ag::Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(ag::Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::Step(double lr) {
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * p.grad;
    v_[i] = b2 * v_[i] + (1.0 - b2) * p.grad.cwiseProduct(p.grad);
    p.value *= 1.0 - lr * options_.weight_decay;
    p.value.array() -= lr * (m_[i].array() / c1) /
                       ((v_[i].array() / c2).sqrt() + options_.epsilon);
  }
}

double GlobalGradNorm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

StepReport TrainStep(TransducerModel& model, AdamW& optimizer,
                     const CompositeBatch& batch, const TrainConfig& cfg,
                     const xmodal::XModalConfig& xcfg, long step) {
  batch.Validate(cfg.system);
  StepReport report;
  report.step = step;
  report.lr = LrAt(step, cfg);
  model.ZeroGrad();
  const double text_weight =
      batch.text_only.empty() ? 0.0
                              : 1.0 / static_cast<double>(batch.text_only.size());
  report.loss =
      AccumulateGradients(model, batch, cfg, xcfg, step,
                          1.0 / static_cast<double>(batch.paired.size()),
                          text_weight);
  const std::vector<Parameter*> params = model.Parameters();
  report.grad_norm = GlobalGradNorm(params);
  if (!Finite(report.loss) || !std::isfinite(report.grad_norm)) {
    report.aborted = true;
    report.diagnostics = "non-finite loss or gradient: " +
                         Describe(report.loss) +
                         " grad_norm=" + std::to_string(report.grad_norm);
    model.ZeroGrad();
    return report;
  }
  if (cfg.clip_norm > 0.0 && report.grad_norm > cfg.clip_norm) {
    const double scale = cfg.clip_norm / report.grad_norm;
    for (Parameter* p : params) p->grad *= scale;
    report.clipped = true;
  }
  optimizer.Step(report.lr);
  return report;
}

BatchStream::Cycle::Cycle(std::size_t size, std::uint64_t seed)
    : order_(size), seed_(seed) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(seed_);
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::size_t BatchStream::Cycle::Next() {
  if (pos_ == order_.size()) {
    pos_ = 0;
    ++epoch_;
    std::mt19937_64 rng(seed_ + static_cast<std::uint64_t>(epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  return order_[pos_++];
}

BatchStream::BatchStream(const TrainingData& data, const TrainConfig& cfg)
    : data_(data), cfg_(cfg) {
  cfg_.Validate();
  if (data_.paired.empty()) {
    throw std::invalid_argument("training data: no paired utterances");
  }
  const std::uint64_t base = cfg_.seed * 1000003ULL;
  real_ = Cycle(data_.paired.size(), base + 11);
  if (cfg_.system == System::kTopline && cfg_.tts_per_real > 0) {
    if (data_.tts.empty()) {
      throw std::invalid_argument("topline: no simulated-TTS utterances");
    }
    tts_ = Cycle(data_.tts.size(), base + 23);
  }
  if (cfg_.system == System::kCm) {
    if (data_.text_only.empty()) {
      throw std::invalid_argument("cm: no text-only samples");
    }
    text_ = Cycle(data_.text_only.size(), base + 37);
  }
}

CompositeBatch BatchStream::Next() {
  CompositeBatch batch;
  for (int i = 0; i < cfg_.paired_batch; ++i, ++paired_slots_) {
    // Every (1 + tts_per_real)-th paired slot is real speech for topline.
    const bool tts = !tts_.empty() &&
                     paired_slots_ % (1 + cfg_.tts_per_real) != 0;
    batch.paired.push_back(tts ? &data_.tts[tts_.Next()]
                               : &data_.paired[real_.Next()]);
  }
  if (!text_.empty()) {
    for (int i = 0; i < cfg_.textonly_batch; ++i) {
      batch.text_only.push_back(&data_.text_only[text_.Next()]);
    }
  }
  return batch;
}

TrainResult Train(TransducerModel& model, const TrainingData& data,
                  const TrainConfig& cfg, const xmodal::XModalConfig& xcfg,
                  const TrainOptions& options) {
  cfg.Validate();
  xcfg.Validate();
  BatchStream stream(data, cfg);
  AdamW optimizer(model.Parameters(), {cfg.beta1, cfg.beta2, cfg.epsilon,
                                       cfg.weight_decay});
  const bool write = !options.out_dir.empty();
  std::string log;
  if (write) fs::create_directories(options.out_dir);

  TrainResult result;
  // Steps count from 1 so the first update already has a non-zero rate.
  for (long step = 1; step <= cfg.steps; ++step) {
    const StepReport report =
        TrainStep(model, optimizer, stream.Next(), cfg, xcfg, step);
    ++result.steps;
    if (report.aborted) ++result.aborted_steps;
    if (report.clipped) ++result.clipped_steps;
    result.last_loss = report.loss;
    if (write) {
      log += report.ToJson().dump();
      log += '\n';
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
          step != cfg.steps) {
        char name[48];
        std::snprintf(name, sizeof(name), "/checkpoint-%07ld.ckpt", step);
        model::SaveCheckpoint(model, options.out_dir + name);
      }
    }
    if (options.on_step) options.on_step(report);
  }
  if (write) {
    io::WriteFile(options.out_dir + "/train_log.jsonl", log);
    result.final_checkpoint = options.out_dir + "/final.ckpt";
    model::SaveCheckpoint(model, result.final_checkpoint);
  }
  return result;
}

}  // namespace cstt::trainer
