#ifndef CSTT_HARNESS_H_
#define CSTT_HARNESS_H_

// Experiment plans: synthesise (or load) the benchmark, train each system,
// decode the evaluation sets greedily and tabulate TER / CER / WER.
//
// Plan files are INI. Sections [language], [datasets], [textgen] describe the
// synthetic benchmark, [model], [train], [xmodal] the shared training
// config, and every `[run NAME]` section adds one system:
//
//   [experiment]
//   seed = 1
//   eval_sets = eval_homogeneous eval_shifted
//   ; data = DIR   (optional: reuse a `cstt synth` output directory)
//
//   [run cm_mse]
//   system = cm
//   train.mu = 2.33
//   xmodal.mode = mse

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cstt/config.h"
#include "cstt/metrics.h"
#include "cstt/model.h"
#include "cstt/synthcorpus.h"
#include "cstt/trainer.h"

namespace cstt::harness {

// 100 * (baseline - system) / baseline. Throws std::invalid_argument unless
// baseline > 0.
double RelativeChange(double baseline_ter, double system_ter);

// Token ids -> space-joined text, skipping blank.
std::string DetokenizeIds(std::span<const int> ids,
                          std::span<const std::string> vocab, int blank_id = 0);

// Greedy-decodes every utterance through the speech path and scores the
// hypotheses against the transcripts.
metrics::MetricsReport Evaluate(model::TransducerModel& model,
                                std::span<const synth::Utterance> utts,
                                std::span<const std::string> vocab);

struct RunSpec {
  std::string name;
  trainer::System system = trainer::System::kBaseline;
  std::uint64_t seed = 1;
  // Leaf overrides such as "train.mu" -> "2.33".
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct Plan {
  // Benchmark and shared training sections.
  config::Tree base;
  std::vector<RunSpec> runs;
  std::vector<std::string> eval_sets;
  std::uint64_t seed = 1;
  // Existing synth directory; empty means synthesise from `base`.
  std::string data_dir;
};

// `base_dir` resolves a relative `experiment.data`.
Plan ParsePlan(const config::Tree& tree, const std::string& base_dir = ".");
Plan LoadPlan(const std::string& path);

struct ExperimentData {
  std::vector<std::string> token_vocab;
  int phoneme_count = 0;
  int feature_dim = 0;
  synth::Datasets datasets;
  // SHA-256 of MANIFEST.sha256.
  std::string manifest_sha256;

  std::span<const synth::Utterance> EvalSet(const std::string& name) const;
};

// Loads `plan.data_dir`, or synthesises into <out_dir>/data.
ExperimentData PrepareData(const Plan& plan, const std::string& out_dir);

struct RunRow {
  std::string name;
  std::string system;
  bool failed = false;
  std::string error;
  std::map<std::string, metrics::MetricsReport> eval;
  // Relative TER change against the baseline row, per eval set.
  std::map<std::string, double> relative_ter;
  std::string checkpoint_sha256;
  long aborted_steps = 0;
};

struct ReportBundle {
  std::vector<std::string> eval_sets;
  std::vector<RunRow> rows;
  std::string manifest_sha256;
  std::string table;                   // report.txt
  std::vector<nlohmann::json> records;  // report.jsonl
};

// Effective config tree of one run: plan base, run overrides, system and
// seed.
config::Tree RunConfig(const Plan& plan, const RunSpec& run);

// Trains and evaluates one run in <out_dir>/runs/<name>/.
RunRow ExecuteRun(const Plan& plan, const RunSpec& run,
                  const ExperimentData& data, const std::string& out_dir);

// Fills relative_ter and renders the table and records.
ReportBundle BuildReport(std::vector<RunRow> rows,
                         const std::vector<std::string>& eval_sets,
                         const std::string& manifest_sha256);

// Runs every system in the plan (a failed run becomes a FAILED row) and
// writes report.txt, report.jsonl and REPORT.sha256 into out_dir.
ReportBundle RunExperiment(const Plan& plan, const std::string& out_dir);

}  // namespace cstt::harness

#endif  // CSTT_HARNESS_H_
