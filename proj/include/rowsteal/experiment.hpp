#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rowsteal/attack.hpp"
#include "rowsteal/dram.hpp"
#include "rowsteal/subtrain.hpp"
#include "rowsteal/victim.hpp"

namespace rowsteal {

struct DataConfig {
  std::size_t train_samples = 2000;
  std::size_t test_samples = 1000;
  double subset_fraction = 0.08;   // attacker's share of the training data
  std::size_t modes_per_class = 6;
  double noise_std = 0.25;
};

struct VictimSpec {
  std::vector<std::size_t> dims = {32, 56, 4};  // input, hidden..., classes
  TrainConfig train;  // the victim's own training run (ranges all-unknown)
};

struct AttackSection {
  std::vector<std::size_t> rounds = {1500};  // snapshot budgets; max is the horizon
  std::vector<Strategy> strategies = {Strategy::MsbPriority, Strategy::AllBits};
  TraceConfig trace;
  CostModel cost;
  double miss_prob = 0.0;
  std::size_t max_units_per_round = 0;
  std::size_t pageset_capacity = 512;
};

struct ExperimentConfig {
  std::string out_dir = "out";
  std::uint64_t master_seed = 1;
  DramGeometry geometry{8192, 2, 4096};
  double frac_vuln_pages = 0.71;
  double mean_cells_per_vuln_page = 7.85;
  PackConfig pack{64, 8};
  VictimSpec victim;
  DataConfig data;
  AttackSection attack;
  TrainConfig train;  // substitute training, shared by the arms
  PgdConfig pgd;

  void validate() const;  // throws ParameterError listing every violated field
};

/// Parses a JSON config, fills defaults, normalizes (rounds sorted unique),
/// and validates.  Parse failures and field violations throw ParameterError
/// with aggregated, located messages.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Normalized JSON echo of a config (defaults filled, stable key order).
std::string config_to_json(const ExperimentConfig& cfg);

/// FNV-1a hash of the normalized config text, as fixed-width hex.
std::string config_hash(const ExperimentConfig& cfg);

/// A stage failure wrapping the underlying error; `stage` names the pipeline
/// step that aborted.
class StageFault : public std::runtime_error {
 public:
  StageFault(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ArmResult {
  std::string arm;       // "baseline", "deepsteal", "whitebox"
  std::size_t rounds = 0;
  std::string strategy;  // "msb", "allbits", or "none"
  Metrics metrics;
};

struct StrategySummary {
  std::string strategy;
  std::size_t rounds_executed = 0;
  bool exhausted = false;
  double seconds = 0.0;
  double final_msb = 0.0;
  double final_full = 0.0;
};

struct ExperimentReport {
  std::string hash;
  double victim_accuracy = 0.0;
  std::vector<StrategySummary> attacks;
  std::vector<ArmResult> arms;
};

/// Metrics table as CSV (arm,rounds,strategy,accuracy,fidelity,
/// acc_under_attack,seed).
std::string metrics_to_csv(const ExperimentReport& report, std::uint64_t seed);

/// Deterministic sub-products, each a pure function of the config.  The
/// pipeline stages and the stage-wise CLI subcommands share these, so files
/// produced by one invocation compose with a later one.
BlobModes experiment_modes(const ExperimentConfig& cfg);
Dataset experiment_train_set(const ExperimentConfig& cfg);
Dataset experiment_test_set(const ExperimentConfig& cfg);
Dataset experiment_attacker_set(const ExperimentConfig& cfg);
VictimModel experiment_victim(const ExperimentConfig& cfg);  // trains and quantizes
TemplateMap experiment_template(const ExperimentConfig& cfg);

/// One strategy's leak run: places the victim, executes the rounds, audits the
/// ledger against ground truth, and writes curve/ledger/profile files under
/// cfg.out_dir.  Snapshots and the curve are returned through the out
/// parameters when non-null.
StrategySummary run_attack_stage(const ExperimentConfig& cfg, const VictimModel& model,
                                 const TemplateMap& tmpl, Strategy strategy,
                                 std::map<std::size_t, LeakLedger>* snapshots_out = nullptr,
                                 RecoveryCurve* curve_out = nullptr);

/// The substitute arms implied by a config: baseline, one deepsteal arm per
/// (strategy, round budget), and whitebox, in report order.
struct ArmSpec {
  std::string name;       // "baseline", "deepsteal", "whitebox"
  std::size_t rounds = 0;
  std::string strategy;   // "none" for baseline/whitebox
  bool whitebox = false;
};
std::vector<ArmSpec> experiment_arms(const ExperimentConfig& cfg);

/// File tag for an arm ("baseline", "deepsteal_msb_r1500", "whitebox").
std::string arm_tag(const ArmSpec& spec);

/// End-to-end pipeline: data + victim -> template -> leak rounds per strategy
/// -> profile -> substitute arms -> evaluation.  Writes template, models,
/// ledgers, curves, profiles, metrics.csv, report.json, and summary.txt under
/// cfg.out_dir.  Any stage failure surfaces as StageFault.  Deterministic:
/// identical config (hash included) reproduces every output byte.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

}  // namespace rowsteal
