#include "cstt/harness.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include <boost/algorithm/string.hpp>

#include "cstt/io.h"

namespace cstt::harness {

namespace fs = std::filesystem;

namespace {

constexpr const char* kBaseSections[] = {"language", "datasets", "textgen",
                                         "model",    "train",    "xmodal"};

std::string Percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string Pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

}  // namespace

double RelativeChange(double baseline_ter, double system_ter) {
  if (!(baseline_ter > 0.0)) {
    throw std::invalid_argument("relative change needs a positive baseline");
  }
  return 100.0 * (baseline_ter - system_ter) / baseline_ter;
}

std::string DetokenizeIds(std::span<const int> ids,
                          std::span<const std::string> vocab, int blank_id) {
  std::string out;
  for (int id : ids) {
    if (id == blank_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw std::out_of_range("token id " + std::to_string(id) +
                              " outside the vocabulary");
    }
    if (!out.empty()) out += ' ';
    out += vocab[id];
  }
  return out;
}

metrics::MetricsReport Evaluate(model::TransducerModel& model,
                                std::span<const synth::Utterance> utts,
                                std::span<const std::string> vocab) {
  metrics::MetricsReport total;
  const int blank = model.config().blank_id;
  for (const synth::Utterance& u : utts) {
    const std::vector<int> hyp = model.Decode(u.speech());
    const auto ref_tokens =
        metrics::TokenizeMixed(DetokenizeIds(u.token_ids, vocab, blank));
    const auto hyp_tokens =
        metrics::TokenizeMixed(DetokenizeIds(hyp, vocab, blank));
    total += metrics::Score(ref_tokens, hyp_tokens);
  }
  return total;
}

Plan ParsePlan(const config::Tree& tree, const std::string& base_dir) {
  Plan plan;
  for (const char* section : kBaseSections) {
    if (auto child = tree.get_child_optional(section)) {
      plan.base.put_child(section, *child);
    }
  }
  plan.seed = tree.get<std::uint64_t>("experiment.seed", 1);
  const std::string sets = tree.get<std::string>(
      "experiment.eval_sets", "eval_homogeneous eval_shifted");
  boost::split(plan.eval_sets, sets, boost::is_any_of(" \t,"),
               boost::token_compress_on);
  std::erase(plan.eval_sets, std::string());
  for (const std::string& s : plan.eval_sets) {
    if (s != "eval_homogeneous" && s != "eval_shifted") {
      throw std::invalid_argument("unknown eval set '" + s + "'");
    }
  }
  if (auto data = tree.get_optional<std::string>("experiment.data")) {
    fs::path p(*data);
    plan.data_dir = p.is_absolute() ? p.string() : (fs::path(base_dir) / p).string();
  }

  for (const auto& [key, section] : tree) {
    if (!key.starts_with("run ")) continue;
    RunSpec run;
    run.name = boost::trim_copy(key.substr(4));
    if (run.name.empty() ||
        run.name.find_first_of("/\\ ") != std::string::npos) {
      throw std::invalid_argument("bad run name '" + run.name + "'");
    }
    run.seed = plan.seed;
    bool has_system = false;
    for (const auto& [k, v] : section) {
      if (k == "system") {
        run.system = trainer::ParseSystem(v.data());
        has_system = true;
      } else if (k == "seed") {
        run.seed = v.get_value<std::uint64_t>();
      } else {
        run.overrides.emplace_back(k, v.data());
      }
    }
    if (!has_system) {
      throw std::invalid_argument("run '" + run.name + "' has no system");
    }
    for (const RunSpec& other : plan.runs) {
      if (other.name == run.name) {
        throw std::invalid_argument("duplicate run '" + run.name + "'");
      }
    }
    plan.runs.push_back(std::move(run));
  }
  if (plan.runs.empty()) throw std::invalid_argument("plan has no runs");
  return plan;
}

Plan LoadPlan(const std::string& path) {
  return ParsePlan(config::LoadFile(path),
                   fs::absolute(path).parent_path().string());
}

std::span<const synth::Utterance> ExperimentData::EvalSet(
    const std::string& name) const {
  if (name == "eval_homogeneous") return datasets.eval_homogeneous;
  if (name == "eval_shifted") return datasets.eval_shifted;
  throw std::invalid_argument("unknown eval set '" + name + "'");
}

ExperimentData PrepareData(const Plan& plan, const std::string& out_dir) {
  ExperimentData data;
  std::string dir = plan.data_dir;
  if (dir.empty()) {
    dir = out_dir + "/data";
    synth::SynthesisResult s = synth::Synthesize(plan.base);
    synth::WriteDatasets(dir, s.language, s.datasets);
    data.token_vocab = s.language.token_vocab;
    data.phoneme_count = s.language.phoneme_count;
    data.feature_dim = s.language.params.feature_dim;
    data.datasets = std::move(s.datasets);
  } else {
    const synth::LoadedLanguage lang = synth::ReadLanguage(dir);
    data.token_vocab = lang.token_vocab;
    data.phoneme_count = lang.phoneme_count;
    data.feature_dim = lang.feature_dim;
    data.datasets.train_paired = synth::ReadUtterances(dir, "train_paired");
    data.datasets.train_textonly = synth::ReadTextOnly(dir, "train_textonly");
    data.datasets.train_tts = synth::ReadUtterances(dir, "train_tts");
    data.datasets.eval_homogeneous =
        synth::ReadUtterances(dir, "eval_homogeneous");
    data.datasets.eval_shifted = synth::ReadUtterances(dir, "eval_shifted");
  }
  data.manifest_sha256 = io::Sha256File(dir + "/MANIFEST.sha256");
  return data;
}

config::Tree RunConfig(const Plan& plan, const RunSpec& run) {
  config::Tree tree = plan.base;
  for (const auto& [key, value] : run.overrides) tree.put(key, value);
  tree.put("train.system", trainer::SystemName(run.system));
  tree.put("train.seed", run.seed);
  return tree;
}

RunRow ExecuteRun(const Plan& plan, const RunSpec& run,
                  const ExperimentData& data, const std::string& out_dir) {
  RunRow row;
  row.name = run.name;
  row.system = trainer::SystemName(run.system);
  try {
    const config::Tree tree = RunConfig(plan, run);
    model::ModelConfig mcfg =
        model::ModelConfig::Toy(static_cast<int>(data.token_vocab.size()),
                                data.phoneme_count)
            .WithOverrides(tree);
    mcfg.input_dim = data.feature_dim;
    mcfg.Validate();
    const trainer::TrainConfig tcfg = trainer::TrainConfig().WithOverrides(tree);
    const xmodal::XModalConfig xcfg =
        xmodal::XModalConfig().WithOverrides(tree);

    const std::string run_dir = out_dir + "/runs/" + run.name;
    fs::create_directories(run_dir);
    config::SaveFile(tree, run_dir + "/config.ini");

    model::TransducerModel model(mcfg, run.seed);
    trainer::TrainingData td{data.datasets.train_paired,
                             data.datasets.train_textonly,
                             data.datasets.train_tts};
    trainer::TrainOptions options;
    options.out_dir = run_dir;
    const trainer::TrainResult result = trainer::Train(model, td, tcfg, xcfg,
                                                       options);
    row.aborted_steps = result.aborted_steps;
    row.checkpoint_sha256 = io::Sha256File(result.final_checkpoint);
    for (const std::string& set : plan.eval_sets) {
      row.eval[set] = Evaluate(model, data.EvalSet(set), data.token_vocab);
    }
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
    row.eval.clear();
  }
  return row;
}

ReportBundle BuildReport(std::vector<RunRow> rows,
                         const std::vector<std::string>& eval_sets,
                         const std::string& manifest_sha256) {
  ReportBundle bundle;
  bundle.eval_sets = eval_sets;
  bundle.manifest_sha256 = manifest_sha256;

  const RunRow* baseline = nullptr;
  for (const RunRow& r : rows) {
    if (r.system == "baseline" && !r.failed) {
      baseline = &r;
      break;
    }
  }
  for (RunRow& r : rows) {
    if (r.failed || baseline == nullptr) continue;
    for (const std::string& set : eval_sets) {
      const double base_ter = baseline->eval.at(set).ter;
      if (base_ter > 0.0) {
        r.relative_ter[set] = RelativeChange(base_ter, r.eval.at(set).ter);
      }
    }
  }

  std::ostringstream t;
  constexpr std::size_t kNameWidth = 24;
  constexpr std::size_t kCol = 8;
  t << Pad("system", kNameWidth);
  for (const std::string& set : eval_sets) {
    t << "| " << Pad(set, kCol * 4);
  }
  t << "\n" << Pad("", kNameWidth);
  for (std::size_t i = 0; i < eval_sets.size(); ++i) {
    t << "| " << Pad("CS-All", kCol) << Pad("CS-Man", kCol)
      << Pad("CS-Eng", kCol) << Pad("rel%", kCol);
  }
  t << "\n";
  for (const RunRow& r : rows) {
    t << Pad(r.name, kNameWidth);
    for (const std::string& set : eval_sets) {
      if (r.failed) {
        t << "| " << Pad("FAILED", kCol * 4);
        continue;
      }
      const metrics::MetricsReport& m = r.eval.at(set);
      auto rel = r.relative_ter.find(set);
      t << "| " << Pad(Percent(m.ter), kCol) << Pad(Percent(m.cer_man), kCol)
        << Pad(Percent(m.wer_eng), kCol)
        << Pad(rel == r.relative_ter.end() ? "-" : Percent(rel->second), kCol);
    }
    t << "\n";
  }
  t << "\nrel%: relative TER change against the first baseline row.\n";
  t << "manifest sha256: " << manifest_sha256 << "\n";
  for (const RunRow& r : rows) {
    t << r.name << ": "
      << (r.failed ? "FAILED (" + r.error + ")"
                   : "checkpoint sha256 " + r.checkpoint_sha256)
      << "\n";
  }
  bundle.table = t.str();

  for (const RunRow& r : rows) {
    if (r.failed) {
      bundle.records.push_back({{"run", r.name},
                                {"system", r.system},
                                {"status", "FAILED"},
                                {"error", r.error},
                                {"manifest_sha256", manifest_sha256}});
      continue;
    }
    for (const std::string& set : eval_sets) {
      const metrics::MetricsReport& m = r.eval.at(set);
      nlohmann::json rec = {
          {"run", r.name},
          {"system", r.system},
          {"status", "OK"},
          {"eval_set", set},
          {"cs_all", m.ter},
          {"cs_man", m.cer_man},
          {"cs_eng", m.wer_eng},
          {"ref_tokens_man", m.man.ref_tokens},
          {"ref_tokens_eng", m.eng.ref_tokens},
          {"errors_man", m.man.errors()},
          {"errors_eng", m.eng.errors()},
          {"ter_relative_change", nullptr},
          {"aborted_steps", r.aborted_steps},
          {"checkpoint_sha256", r.checkpoint_sha256},
          {"manifest_sha256", manifest_sha256}};
      if (auto rel = r.relative_ter.find(set); rel != r.relative_ter.end()) {
        rec["ter_relative_change"] = rel->second;
      }
      bundle.records.push_back(std::move(rec));
    }
  }
  bundle.rows = std::move(rows);
  return bundle;
}

ReportBundle RunExperiment(const Plan& plan, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const ExperimentData data = PrepareData(plan, out_dir);
  std::vector<RunRow> rows;
  for (const RunSpec& run : plan.runs) {
    rows.push_back(ExecuteRun(plan, run, data, out_dir));
  }
  ReportBundle bundle =
      BuildReport(std::move(rows), plan.eval_sets, data.manifest_sha256);
  io::WriteFile(out_dir + "/report.txt", bundle.table);
  io::WriteJsonLines(out_dir + "/report.jsonl", bundle.records);
  io::WriteFile(out_dir + "/REPORT.sha256",
                io::Sha256File(out_dir + "/report.txt") + "  report.txt\n" +
                    io::Sha256File(out_dir + "/report.jsonl") +
                    "  report.jsonl\n");
  return bundle;
}

}  // namespace cstt::harness
