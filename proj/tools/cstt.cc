// cstt: code-switching text generation, scoring, synthetic benchmark and
// transducer training from the command line.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cstt/config.h"
#include "cstt/harness.h"
#include "cstt/io.h"
#include "cstt/metrics.h"
#include "cstt/model.h"
#include "cstt/synthcorpus.h"
#include "cstt/textgen.h"
#include "cstt/trainer.h"
#include "cstt/xmodal.h"

namespace {

namespace fs = std::filesystem;
using namespace cstt;

std::vector<std::string> ReadLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

nlohmann::json StatsJson(const textgen::CorpusStats& s) {
  return {{"sentences", s.sentence_count},
          {"tokens", s.token_count},
          {"inserted_tokens", s.inserted_token_count},
          {"inserted_ratio", s.inserted_ratio},
          {"noun_substitutions", s.noun_substitutions},
          {"verb_substitutions", s.verb_substitutions},
          {"ratio_unreachable", s.ratio_unreachable}};
}

nlohmann::json MetricsJson(const metrics::MetricsReport& r) {
  auto counts = [](const metrics::ErrorCounts& c) {
    return nlohmann::json{{"substitutions", c.substitutions},
                          {"deletions", c.deletions},
                          {"insertions", c.insertions},
                          {"ref_tokens", c.ref_tokens}};
  };
  return {{"CS-All", r.ter},
          {"CS-Man", r.cer_man},
          {"CS-Eng", r.wer_eng},
          {"man", counts(r.man)},
          {"eng", counts(r.eng)},
          {"man_zero_denominator", r.man_zero_denominator},
          {"eng_zero_denominator", r.eng_zero_denominator},
          {"degenerate", r.degenerate}};
}

struct TextgenArgs {
  std::string pairs;
  std::string dict;
  double ratio = 0.10;
  std::uint64_t seed = 0;
  std::string out;
  std::string order = "rarest";
  std::string direction = "eng-into-man";
};

int RunTextgen(const TextgenArgs& a) {
  std::vector<textgen::ParallelPair> pairs;
  const auto lines = ReadLines(a.pairs);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty() || lines[i][0] == '#') continue;
    pairs.push_back(
        textgen::ParsePairLine(lines[i], static_cast<int>(i) + 1));
  }
  std::ifstream dict(a.dict);
  if (!dict) throw std::runtime_error("cannot open " + a.dict);
  const textgen::BilingualLexicon lexicon = textgen::ParseLexicon(dict);

  textgen::SubstitutionPolicy policy;
  policy.target_ratio = a.ratio;
  policy.rng_seed = a.seed;
  policy.order = a.order == "rarest" ? textgen::FrequencyOrder::kRarestFirst
                                     : textgen::FrequencyOrder::kCommonestFirst;
  policy.direction = a.direction == "eng-into-man"
                         ? textgen::Direction::kEnglishIntoMandarin
                         : textgen::Direction::kMandarinIntoEnglish;
  policy.freq_table = textgen::CountFrequencies(pairs, policy.direction);
  const textgen::Corpus corpus = textgen::GenerateCorpus(pairs, lexicon, policy);

  std::string out;
  for (const auto& s : corpus.sentences) {
    out += textgen::FormatSentenceLine(s);
    out += '\n';
  }
  io::WriteFile(a.out, out);
  std::cout << StatsJson(corpus.stats).dump() << "\n";
  if (corpus.stats.ratio_unreachable) {
    std::cerr << "warning: inserted-token ratio "
              << corpus.stats.inserted_ratio << " is below the target "
              << a.ratio << " (not enough alignable words)\n";
  }
  return 0;
}

// Lines are either plain transcripts or "id<TAB>transcript".
std::string TranscriptOf(const std::string& line) {
  const auto tab = line.find('\t');
  return tab == std::string::npos ? line : line.substr(tab + 1);
}

int RunScore(const std::string& ref_path, const std::string& hyp_path,
             const std::string& report_path) {
  const auto refs = ReadLines(ref_path);
  const auto hyps = ReadLines(hyp_path);
  if (refs.size() != hyps.size()) {
    throw std::runtime_error("reference has " + std::to_string(refs.size()) +
                             " lines, hypothesis has " +
                             std::to_string(hyps.size()));
  }
  metrics::MetricsReport total;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    auto tokenize = [&](const std::string& path, const std::string& line) {
      try {
        return metrics::TokenizeMixed(TranscriptOf(line));
      } catch (const metrics::TokenizeError& e) {
        throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": " +
                                 e.what());
      }
    };
    total += metrics::Score(tokenize(ref_path, refs[i]),
                            tokenize(hyp_path, hyps[i]));
  }
  nlohmann::json report = MetricsJson(total);
  report["utterances"] = refs.size();
  io::WriteFile(report_path, report.dump(2) + "\n");
  std::printf("CS-All %.2f  CS-Man %.2f  CS-Eng %.2f\n", total.ter,
              total.cer_man, total.wer_eng);
  return 0;
}

int RunSynth(const std::string& spec_path, const std::string& out_dir) {
  const config::Tree tree = config::LoadFile(spec_path);
  const synth::SynthesisResult s = synth::Synthesize(tree);
  synth::WriteDatasets(out_dir, s.language, s.datasets);
  std::cout << StatsJson(s.textgen_stats).dump() << "\n";
  return 0;
}

int RunTrain(const std::string& config_path, const std::string& system,
             const std::string& out_dir) {
  config::Tree tree = config::LoadFile(config_path);
  tree.put("train.system", system);
  harness::Plan plan;
  for (const char* section :
       {"language", "datasets", "textgen", "model", "train", "xmodal"}) {
    if (auto child = tree.get_child_optional(section)) {
      plan.base.put_child(section, *child);
    }
  }
  if (auto dir = tree.get_optional<std::string>("data.dir")) {
    const fs::path p(*dir);
    plan.data_dir = p.is_absolute()
                        ? p.string()
                        : (fs::absolute(config_path).parent_path() / p).string();
  }
  fs::create_directories(out_dir);
  const harness::ExperimentData data = harness::PrepareData(plan, out_dir);

  model::ModelConfig mcfg =
      model::ModelConfig::Toy(static_cast<int>(data.token_vocab.size()),
                              data.phoneme_count)
          .WithOverrides(plan.base);
  mcfg.input_dim = data.feature_dim;
  mcfg.Validate();
  const trainer::TrainConfig tcfg = trainer::TrainConfig().WithOverrides(tree);
  const xmodal::XModalConfig xcfg = xmodal::XModalConfig().WithOverrides(tree);
  config::Tree effective = plan.base;
  mcfg.WriteTo(effective);
  tcfg.WriteTo(effective);
  xcfg.WriteTo(effective);
  config::SaveFile(effective, out_dir + "/config.ini");

  model::TransducerModel model(mcfg, tcfg.seed);
  trainer::TrainOptions options;
  options.out_dir = out_dir;
  options.on_step = [&](const trainer::StepReport& r) {
    if (r.aborted) std::cerr << "step " << r.step << ": " << r.diagnostics << "\n";
    if (r.step % 100 == 0 || r.step == tcfg.steps) {
      std::fprintf(stderr, "step %ld lr %.3g loss %.4f\n", r.step, r.lr,
                   r.loss.total);
    }
  };
  trainer::Train(model,
                 {data.datasets.train_paired, data.datasets.train_textonly,
                  data.datasets.train_tts},
                 tcfg, xcfg, options);

  nlohmann::json eval;
  for (const char* set : {"eval_homogeneous", "eval_shifted"}) {
    eval[set] = MetricsJson(
        harness::Evaluate(model, data.EvalSet(set), data.token_vocab));
  }
  io::WriteFile(out_dir + "/eval.json", eval.dump(2) + "\n");
  std::cout << eval.dump() << "\n";
  return 0;
}

int RunExperiment(const std::string& plan_path, const std::string& out_dir) {
  const harness::Plan plan = harness::LoadPlan(plan_path);
  const harness::ReportBundle bundle = harness::RunExperiment(plan, out_dir);
  std::cout << bundle.table;
  for (const auto& row : bundle.rows) {
    if (row.failed) return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Code-switching text generation and transducer training"};
  app.require_subcommand(1);

  TextgenArgs tg;
  auto* textgen = app.add_subcommand(
      "textgen", "Generate code-switching text from parallel pairs");
  textgen->add_option("--pairs", tg.pairs, "POS-tagged parallel pairs")
      ->required();
  textgen->add_option("--dict", tg.dict, "Bilingual dictionary")->required();
  textgen->add_option("--ratio", tg.ratio, "Target inserted-token ratio")
      ->capture_default_str();
  textgen->add_option("--seed", tg.seed, "Tie-break seed")
      ->capture_default_str();
  textgen->add_option("--out", tg.out, "Output sentence file")->required();
  textgen->add_option("--order", tg.order, "Substitution order")
      ->check(CLI::IsMember({"rarest", "commonest"}))
      ->capture_default_str();
  textgen->add_option("--direction", tg.direction, "Insertion direction")
      ->check(CLI::IsMember({"eng-into-man", "man-into-eng"}))
      ->capture_default_str();

  std::string ref, hyp, report;
  auto* score = app.add_subcommand("score", "Score hypotheses (TER/CER/WER)");
  score->add_option("--ref", ref, "Reference transcripts")->required();
  score->add_option("--hyp", hyp, "Hypothesis transcripts")->required();
  score->add_option("--report", report, "JSON report path")->required();

  std::string spec, out;
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate the synthetic benchmark");
  synth_cmd->add_option("--spec", spec, "Synthesis spec (INI)")->required();
  synth_cmd->add_option("--out", out, "Output directory")->required();

  std::string config_path, system;
  auto* train = app.add_subcommand("train", "Train one system");
  train->add_option("--config", config_path, "Training config (INI)")
      ->required();
  train->add_option("--system", system, "System")
      ->required()
      ->check(CLI::IsMember({"baseline", "topline", "cm"}));
  train->add_option("--out", out, "Output directory")->required();

  std::string plan;
  auto* experiment =
      app.add_subcommand("experiment", "Train, decode and tabulate a plan");
  experiment->add_option("--plan", plan, "Experiment plan (INI)")->required();
  experiment->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*textgen) return RunTextgen(tg);
    if (*score) return RunScore(ref, hyp, report);
    if (*synth_cmd) return RunSynth(spec, out);
    if (*train) return RunTrain(config_path, system, out);
    if (*experiment) return RunExperiment(plan, out);
  } catch (const std::exception& e) {
    std::cerr << "cstt: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
