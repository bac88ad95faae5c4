#include "rowsteal/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <tuple>
#include <utility>

#include "json.hpp"
#include "rowsteal/bitprofile.hpp"
#include "rowsteal/errors.hpp"
#include "rowsteal/ledger.hpp"
#include "rowsteal/rng.hpp"

namespace rowsteal {

namespace {

using ordered_json = nlohmann::ordered_json;

struct Issues {
  std::vector<std::string> v;

  void add(std::string s) { v.push_back(std::move(s)); }
  void raise_if_any(const std::string& what) const {
    if (v.empty()) return;
    std::string msg = what;
    for (const std::string& s : v) msg += "\n  - " + s;
    throw ParameterError(msg);
  }
};

ordered_json section(ordered_json& j, const char* key, Issues& is) {
  if (!j.is_object() || !j.contains(key)) return ordered_json::object();
  ordered_json s = j.at(key);
  j.erase(key);
  if (!s.is_object()) {
    is.add(std::string(key) + ": must be an object");
    return ordered_json::object();
  }
  return s;
}

std::uint64_t take_uint(ordered_json& obj, const std::string& section_name, const char* key,
                        std::uint64_t def, Issues& is) {
  if (!obj.is_object() || !obj.contains(key)) return def;
  const ordered_json v = obj.at(key);
  obj.erase(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    is.add(section_name + "." + key + ": must be non-negative");
    return def;
  }
  is.add(section_name + "." + key + ": must be an unsigned integer");
  return def;
}

double take_num(ordered_json& obj, const std::string& section_name, const char* key, double def,
                Issues& is) {
  if (!obj.is_object() || !obj.contains(key)) return def;
  const ordered_json v = obj.at(key);
  obj.erase(key);
  if (v.is_number()) return v.get<double>();
  is.add(section_name + "." + key + ": must be a number");
  return def;
}

std::string take_str(ordered_json& obj, const std::string& section_name, const char* key,
                     std::string def, Issues& is) {
  if (!obj.is_object() || !obj.contains(key)) return def;
  const ordered_json v = obj.at(key);
  obj.erase(key);
  if (v.is_string()) return v.get<std::string>();
  is.add(section_name + "." + key + ": must be a string");
  return def;
}

std::vector<std::size_t> take_uint_list(ordered_json& obj, const std::string& section_name,
                                        const char* key, std::vector<std::size_t> def,
                                        Issues& is) {
  if (!obj.is_object() || !obj.contains(key)) return def;
  const ordered_json v = obj.at(key);
  obj.erase(key);
  if (!v.is_array()) {
    is.add(section_name + "." + key + ": must be an array of unsigned integers");
    return def;
  }
  std::vector<std::size_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned()) {
      is.add(section_name + "." + key + ": entries must be non-negative integers");
      return def;
    }
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

void leftover(const ordered_json& obj, const std::string& section_name, Issues& is) {
  if (!obj.is_object()) return;
  for (auto it = obj.begin(); it != obj.end(); ++it)
    is.add(section_name + "." + it.key() + ": unknown field");
}

ExperimentConfig config_from_json(ordered_json j) {
  if (!j.is_object()) throw ParameterError("config: top level must be a JSON object");
  Issues is;
  ExperimentConfig cfg;
  cfg.out_dir = take_str(j, "config", "out_dir", cfg.out_dir, is);
  cfg.master_seed = take_uint(j, "config", "master_seed", cfg.master_seed, is);

  ordered_json g = section(j, "geometry", is);
  cfg.geometry.rows_total = take_uint(g, "geometry", "rows_total", cfg.geometry.rows_total, is);
  cfg.geometry.pages_per_row =
      take_uint(g, "geometry", "pages_per_row", cfg.geometry.pages_per_row, is);
  cfg.geometry.page_size_bytes =
      take_uint(g, "geometry", "page_size_bytes", cfg.geometry.page_size_bytes, is);
  leftover(g, "geometry", is);

  ordered_json t = section(j, "template", is);
  cfg.frac_vuln_pages = take_num(t, "template", "frac_vuln_pages", cfg.frac_vuln_pages, is);
  cfg.mean_cells_per_vuln_page =
      take_num(t, "template", "mean_cells_per_vuln_page", cfg.mean_cells_per_vuln_page, is);
  leftover(t, "template", is);

  ordered_json p = section(j, "pack", is);
  cfg.pack.chunk_rows = take_uint(p, "pack", "chunk_rows", cfg.pack.chunk_rows, is);
  cfg.pack.chunk_cols = take_uint(p, "pack", "chunk_cols", cfg.pack.chunk_cols, is);
  leftover(p, "pack", is);

  ordered_json v = section(j, "victim", is);
  cfg.victim.dims = take_uint_list(v, "victim", "dims", cfg.victim.dims, is);
  cfg.victim.train.epochs = take_uint(v, "victim", "epochs", cfg.victim.train.epochs, is);
  cfg.victim.train.finetune_epochs =
      take_uint(v, "victim", "finetune_epochs", cfg.victim.train.finetune_epochs, is);
  cfg.victim.train.batch_size =
      take_uint(v, "victim", "batch_size", cfg.victim.train.batch_size, is);
  cfg.victim.train.lr = take_num(v, "victim", "lr", cfg.victim.train.lr, is);
  leftover(v, "victim", is);

  ordered_json d = section(j, "data", is);
  cfg.data.train_samples = take_uint(d, "data", "train_samples", cfg.data.train_samples, is);
  cfg.data.test_samples = take_uint(d, "data", "test_samples", cfg.data.test_samples, is);
  cfg.data.subset_fraction =
      take_num(d, "data", "subset_fraction", cfg.data.subset_fraction, is);
  cfg.data.modes_per_class =
      take_uint(d, "data", "modes_per_class", cfg.data.modes_per_class, is);
  cfg.data.noise_std = take_num(d, "data", "noise_std", cfg.data.noise_std, is);
  leftover(d, "data", is);

  ordered_json a = section(j, "attack", is);
  cfg.attack.rounds = take_uint_list(a, "attack", "rounds", cfg.attack.rounds, is);
  if (a.contains("strategies")) {
    const ordered_json sv = a.at("strategies");
    a.erase("strategies");
    if (!sv.is_array()) {
      is.add("attack.strategies: must be an array of strategy names");
    } else {
      std::vector<Strategy> strategies;
      for (const auto& e : sv) {
        if (!e.is_string()) {
          is.add("attack.strategies: entries must be strings");
          continue;
        }
        try {
          const Strategy s = strategy_from_string(e.get<std::string>());
          if (std::find(strategies.begin(), strategies.end(), s) == strategies.end())
            strategies.push_back(s);
        } catch (const std::exception& e2) {
          is.add(std::string("attack.strategies: ") + e2.what());
        }
      }
      cfg.attack.strategies = strategies;
    }
  }
  cfg.attack.trace.non_secret_before =
      take_uint(a, "attack", "non_secret_before", cfg.attack.trace.non_secret_before, is);
  cfg.attack.trace.non_secret_between =
      take_uint(a, "attack", "non_secret_between", cfg.attack.trace.non_secret_between, is);
  cfg.attack.miss_prob = take_num(a, "attack", "miss_prob", cfg.attack.miss_prob, is);
  cfg.attack.max_units_per_round =
      take_uint(a, "attack", "max_units_per_round", cfg.attack.max_units_per_round, is);
  cfg.attack.pageset_capacity =
      take_uint(a, "attack", "pageset_capacity", cfg.attack.pageset_capacity, is);
  cfg.attack.cost.t_exhaust = take_num(a, "attack", "t_exhaust", cfg.attack.cost.t_exhaust, is);
  cfg.attack.cost.t_release = take_num(a, "attack", "t_release", cfg.attack.cost.t_release, is);
  cfg.attack.cost.t_inference =
      take_num(a, "attack", "t_inference", cfg.attack.cost.t_inference, is);
  cfg.attack.cost.t_row_msb = take_num(a, "attack", "t_row_msb", cfg.attack.cost.t_row_msb, is);
  cfg.attack.cost.t_row_allbits =
      take_num(a, "attack", "t_row_allbits", cfg.attack.cost.t_row_allbits, is);
  leftover(a, "attack", is);

  ordered_json tr = section(j, "train", is);
  cfg.train.epochs = take_uint(tr, "train", "epochs", cfg.train.epochs, is);
  cfg.train.finetune_epochs =
      take_uint(tr, "train", "finetune_epochs", cfg.train.finetune_epochs, is);
  cfg.train.batch_size = take_uint(tr, "train", "batch_size", cfg.train.batch_size, is);
  cfg.train.lr = take_num(tr, "train", "lr", cfg.train.lr, is);
  cfg.train.lambda = take_num(tr, "train", "lambda", cfg.train.lambda, is);
  leftover(tr, "train", is);

  ordered_json pg = section(j, "pgd", is);
  cfg.pgd.epsilon = take_num(pg, "pgd", "epsilon", cfg.pgd.epsilon, is);
  cfg.pgd.steps = take_uint(pg, "pgd", "steps", cfg.pgd.steps, is);
  cfg.pgd.step_size = take_num(pg, "pgd", "step_size", cfg.pgd.step_size, is);
  leftover(pg, "pgd", is);

  leftover(j, "config", is);
  is.raise_if_any("config: invalid fields");

  // Normalization: snapshot budgets sorted and deduplicated.
  std::sort(cfg.attack.rounds.begin(), cfg.attack.rounds.end());
  cfg.attack.rounds.erase(std::unique(cfg.attack.rounds.begin(), cfg.attack.rounds.end()),
                          cfg.attack.rounds.end());
  cfg.validate();
  return cfg;
}

std::string fmt_fixed(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw FormatError("write failed for '" + path + "'");
}

// All-unknown range tensors for a dims chain; used to train the victim
// itself, where no leak information exists by definition.
RangeTensors blank_ranges(const std::vector<std::size_t>& dims) {
  RangeTensors rt;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerRanges lr;
    const std::size_t rows = dims[l + 1];
    const std::size_t cols = dims[l];
    lr.w_min = Mat(rows, cols, -1.0);
    lr.w_max = Mat(rows, cols, 1.0);
    lr.w_mean = Mat(rows, cols, 0.0);
    lr.set_class.assign(rows * cols, static_cast<std::uint8_t>(WeightSetClass::None));
    rt.layers.push_back(std::move(lr));
  }
  return rt;
}

// True when the MSB-priority curve is at or above the all-bits curve at every
// compared simulated-seconds mark inside the common horizon.
std::optional<bool> msb_dominance(const RecoveryCurve& msb, const RecoveryCurve& allbits) {
  if (msb.points.empty() || allbits.points.empty()) return std::nullopt;
  const double horizon = std::min(msb.points.back().seconds, allbits.points.back().seconds);
  std::size_t i = 0;
  double msb_level = 0.0;
  for (const CurvePoint& p : allbits.points) {
    if (p.seconds > horizon) break;
    while (i < msb.points.size() && msb.points[i].seconds <= p.seconds)
      msb_level = msb.points[i++].msb;
    if (msb_level < p.msb) return false;
  }
  return true;
}

// out_dir is deliberately left out: where the results land must not change
// what the experiment computes, so it is excluded from the echo and the hash.
ordered_json config_json(const ExperimentConfig& c) {
  ordered_json j;
  j["master_seed"] = c.master_seed;
  j["geometry"] = {{"rows_total", c.geometry.rows_total},
                   {"pages_per_row", c.geometry.pages_per_row},
                   {"page_size_bytes", c.geometry.page_size_bytes}};
  j["template"] = {{"frac_vuln_pages", c.frac_vuln_pages},
                   {"mean_cells_per_vuln_page", c.mean_cells_per_vuln_page}};
  j["pack"] = {{"chunk_rows", c.pack.chunk_rows}, {"chunk_cols", c.pack.chunk_cols}};
  j["victim"] = {{"dims", c.victim.dims},
                 {"epochs", c.victim.train.epochs},
                 {"finetune_epochs", c.victim.train.finetune_epochs},
                 {"batch_size", c.victim.train.batch_size},
                 {"lr", c.victim.train.lr}};
  j["data"] = {{"train_samples", c.data.train_samples},
               {"test_samples", c.data.test_samples},
               {"subset_fraction", c.data.subset_fraction},
               {"modes_per_class", c.data.modes_per_class},
               {"noise_std", c.data.noise_std}};
  ordered_json strategies = ordered_json::array();
  for (const Strategy s : c.attack.strategies) strategies.push_back(to_string(s));
  j["attack"] = {{"rounds", c.attack.rounds},
                 {"strategies", strategies},
                 {"non_secret_before", c.attack.trace.non_secret_before},
                 {"non_secret_between", c.attack.trace.non_secret_between},
                 {"miss_prob", c.attack.miss_prob},
                 {"max_units_per_round", c.attack.max_units_per_round},
                 {"pageset_capacity", c.attack.pageset_capacity},
                 {"t_exhaust", c.attack.cost.t_exhaust},
                 {"t_release", c.attack.cost.t_release},
                 {"t_inference", c.attack.cost.t_inference},
                 {"t_row_msb", c.attack.cost.t_row_msb},
                 {"t_row_allbits", c.attack.cost.t_row_allbits}};
  j["train"] = {{"epochs", c.train.epochs},
                {"finetune_epochs", c.train.finetune_epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"lambda", c.train.lambda}};
  j["pgd"] = {{"epsilon", c.pgd.epsilon},
              {"steps", c.pgd.steps},
              {"step_size", c.pgd.step_size}};
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  Issues is;
  auto check = [&](const std::string& field, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      is.add(field + ": " + e.what());
    }
  };
  if (out_dir.empty()) is.add("out_dir: must not be empty");
  check("geometry", [&] { geometry.validate(); });
  if (!(frac_vuln_pages >= 0.0 && frac_vuln_pages <= 1.0))
    is.add("template.frac_vuln_pages: must lie in [0, 1]");
  if (mean_cells_per_vuln_page < 0.0)
    is.add("template.mean_cells_per_vuln_page: must be non-negative");
  check("pack", [&] { pack.validate(); });
  if (victim.dims.size() < 2) {
    is.add("victim.dims: need at least input and output dims");
  } else {
    for (const std::size_t d : victim.dims)
      if (d == 0) {
        is.add("victim.dims: entries must be positive");
        break;
      }
    if (victim.dims.back() < 2) is.add("victim.dims: need at least two classes");
  }
  check("victim", [&] { victim.train.validate(); });
  if (data.train_samples == 0) is.add("data.train_samples: must be positive");
  if (data.test_samples == 0) is.add("data.test_samples: must be positive");
  if (!(data.subset_fraction > 0.0 && data.subset_fraction <= 0.10))
    is.add("data.subset_fraction: must lie in (0, 0.10]");
  if (data.modes_per_class == 0) is.add("data.modes_per_class: must be positive");
  if (data.noise_std < 0.0) is.add("data.noise_std: must be non-negative");
  if (attack.rounds.empty()) is.add("attack.rounds: need at least one budget");
  if (attack.strategies.empty()) is.add("attack.strategies: need at least one strategy");
  if (!(attack.miss_prob >= 0.0 && attack.miss_prob < 1.0))
    is.add("attack.miss_prob: must lie in [0, 1)");
  if (attack.pageset_capacity == 0) is.add("attack.pageset_capacity: must be positive");
  check("attack.cost", [&] { attack.cost.validate(); });
  check("train", [&] { train.validate(); });
  check("pgd", [&] { pgd.validate(); });
  is.raise_if_any("config: invalid values");
}

ExperimentConfig parse_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  return config_from_json(std::move(j));
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParameterError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  return config_json(cfg).dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::uint64_t h = fnv1a64(config_to_json(cfg));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string metrics_to_csv(const ExperimentReport& report, std::uint64_t seed) {
  std::ostringstream os;
  os << "arm,rounds,strategy,accuracy,fidelity,acc_under_attack,seed\n";
  os << std::fixed << std::setprecision(4);
  for (const ArmResult& a : report.arms)
    os << a.arm << ',' << a.rounds << ',' << a.strategy << ',' << a.metrics.accuracy << ','
       << a.metrics.fidelity << ',' << a.metrics.accuracy_under_attack << ',' << seed << '\n';
  return os.str();
}

BlobModes experiment_modes(const ExperimentConfig& cfg) {
  return make_blob_modes(cfg.victim.dims.front(), cfg.victim.dims.back(),
                         cfg.data.modes_per_class, derive_seed(cfg.master_seed, "data/modes"));
}

Dataset experiment_train_set(const ExperimentConfig& cfg) {
  return sample_blobs(experiment_modes(cfg), cfg.data.train_samples, cfg.data.noise_std,
                      derive_seed(cfg.master_seed, "data/train"));
}

Dataset experiment_test_set(const ExperimentConfig& cfg) {
  return sample_blobs(experiment_modes(cfg), cfg.data.test_samples, cfg.data.noise_std,
                      derive_seed(cfg.master_seed, "data/test"));
}

Dataset experiment_attacker_set(const ExperimentConfig& cfg) {
  return subset(experiment_train_set(cfg), cfg.data.subset_fraction,
                derive_seed(cfg.master_seed, "data/subset"));
}

VictimModel experiment_victim(const ExperimentConfig& cfg) {
  TrainConfig vc = cfg.victim.train;
  vc.seed = derive_seed(cfg.master_seed, "victim/train");
  const TinyNet vfloat =
      train_substitute(blank_ranges(cfg.victim.dims), experiment_train_set(cfg), vc);
  return quantize(vfloat, derive_seed(cfg.master_seed, "victim/model"));
}

TemplateMap experiment_template(const ExperimentConfig& cfg) {
  return generate_template(cfg.geometry, cfg.frac_vuln_pages, cfg.mean_cells_per_vuln_page,
                           derive_seed(cfg.master_seed, "template"));
}

StrategySummary run_attack_stage(const ExperimentConfig& cfg, const VictimModel& model,
                                 const TemplateMap& tmpl, Strategy strategy,
                                 std::map<std::size_t, LeakLedger>* snapshots_out,
                                 RecoveryCurve* curve_out) {
  MemSystem sys(cfg.geometry, cfg.attack.pageset_capacity);
  VictimProcess vp(model, cfg.pack, sys);
  vp.place_initial();
  LeakLedger ledger(model);
  AttackConfig ac;
  ac.rounds = *std::max_element(cfg.attack.rounds.begin(), cfg.attack.rounds.end());
  ac.strategy = strategy;
  ac.cost = cfg.attack.cost;
  ac.trace = cfg.attack.trace;
  ac.miss_prob = cfg.attack.miss_prob;
  ac.seed = derive_seed(cfg.master_seed, "attack/" + to_string(strategy));
  ac.max_units_per_round = cfg.attack.max_units_per_round;
  ac.snapshot_rounds = cfg.attack.rounds;
  AttackResult res = run_attack(ac, tmpl, sys, vp, ledger);
  ledger.verify_against(model);  // zero-tolerance ground-truth audit
  const std::string dir = cfg.out_dir;
  res.curve.save(dir + "/curve_" + to_string(strategy) + ".csv");
  for (const auto& [r, snap] : res.snapshots) {
    const std::string tag = to_string(strategy) + "_r" + std::to_string(r);
    snap.save(dir + "/ledger_" + tag + ".txt");
    write_profile_csv(snap, model, dir + "/profile_" + tag + ".csv");
  }
  StrategySummary sum;
  sum.strategy = to_string(strategy);
  sum.rounds_executed = res.rounds_executed;
  sum.exhausted = res.exhausted;
  sum.seconds = res.seconds;
  const auto fr = ledger.prefix_fractions();
  sum.final_msb = fr[0];
  sum.final_full = fr[7];
  if (snapshots_out) *snapshots_out = std::move(res.snapshots);
  if (curve_out) *curve_out = std::move(res.curve);
  return sum;
}

std::vector<ArmSpec> experiment_arms(const ExperimentConfig& cfg) {
  std::vector<ArmSpec> specs;
  specs.push_back({"baseline", 0, "none", false});
  for (const Strategy strat : cfg.attack.strategies)
    for (const std::size_t r : cfg.attack.rounds)
      specs.push_back({"deepsteal", r, to_string(strat), false});
  specs.push_back({"whitebox", 0, "none", true});
  return specs;
}

std::string arm_tag(const ArmSpec& spec) {
  if (spec.name == "deepsteal")
    return spec.name + "_" + spec.strategy + "_r" + std::to_string(spec.rounds);
  return spec.name;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.hash = config_hash(cfg);
  auto stage = [](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const StageFault&) {
      throw;
    } catch (const std::exception& e) {
      throw StageFault(name, e.what());
    }
  };
  const std::string dir = cfg.out_dir;
  const std::uint64_t master = cfg.master_seed;

  stage("setup", [&] {
    std::filesystem::create_directories(dir);
    write_text(dir + "/config.json", config_to_json(cfg));
  });

  Dataset test_set, attacker;
  stage("data", [&] {
    test_set = experiment_test_set(cfg);
    attacker = experiment_attacker_set(cfg);
  });

  VictimModel model;
  TinyNet victim_net;
  stage("victim", [&] {
    model = experiment_victim(cfg);
    victim_net = dequantize(model);
    save_model(model, dir + "/victim.qmodel");
    save_net(victim_net, dir + "/victim.net");
    report.victim_accuracy = accuracy(victim_net, test_set);
  });

  std::optional<TemplateMap> tmpl;
  stage("template", [&] {
    tmpl.emplace(experiment_template(cfg));
    save_template(*tmpl, dir + "/template.txt");
  });

  // Per (strategy, round) snapshot ledgers, plus curves for the comparison.
  std::map<std::string, std::map<std::size_t, LeakLedger>> snapshots;
  std::map<std::string, RecoveryCurve> curves;
  for (const Strategy strat : cfg.attack.strategies) {
    stage("attack/" + to_string(strat), [&] {
      report.attacks.push_back(run_attack_stage(cfg, model, *tmpl, strat,
                                                &snapshots[to_string(strat)],
                                                &curves[to_string(strat)]));
    });
  }

  const std::vector<ArmSpec> specs = experiment_arms(cfg);
  const LeakLedger empty_ledger(model);
  const LeakLedger full_ledger = LeakLedger::full(model);
  auto ledger_for = [&](const ArmSpec& s) -> const LeakLedger& {
    if (s.whitebox) return full_ledger;
    if (s.name == "baseline") return empty_ledger;
    return snapshots.at(s.strategy).at(s.rounds);
  };

  std::vector<RangeTensors> arm_ranges;
  stage("profile", [&] {
    for (const ArmSpec& s : specs)
      arm_ranges.push_back(build_range_tensors(ledger_for(s), model));
  });

  std::vector<TinyNet> arm_nets;
  stage("train", [&] {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const ArmSpec& s = specs[i];
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(master, "train");  // shared: arms differ only in ranges
      tc.train_biases = !s.whitebox;
      const TinyNet net = train_substitute(arm_ranges[i], attacker, tc,
                                           s.whitebox ? &model.biases : nullptr);
      save_net(net, dir + "/sub_" + arm_tag(s) + ".net");
      arm_nets.push_back(net);
    }
  });

  stage("eval", [&] {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const ArmSpec& s = specs[i];
      ArmResult ar;
      ar.arm = s.name;
      ar.rounds = s.rounds;
      ar.strategy = s.strategy;
      ar.metrics = evaluate(victim_net, arm_nets[i], test_set, cfg.pgd);
      report.arms.push_back(ar);
    }
  });

  std::optional<bool> dominance;
  if (curves.count("msb") && curves.count("allbits"))
    dominance = msb_dominance(curves.at("msb"), curves.at("allbits"));

  stage("report", [&] {
    write_text(dir + "/metrics.csv", metrics_to_csv(report, master));

    ordered_json rj;
    rj["config"] = config_json(cfg);
    rj["config_hash"] = report.hash;
    ordered_json seeds;
    seeds["data/modes"] = derive_seed(master, "data/modes");
    seeds["data/train"] = derive_seed(master, "data/train");
    seeds["data/test"] = derive_seed(master, "data/test");
    seeds["data/subset"] = derive_seed(master, "data/subset");
    seeds["victim/train"] = derive_seed(master, "victim/train");
    seeds["victim/model"] = derive_seed(master, "victim/model");
    seeds["template"] = derive_seed(master, "template");
    for (const Strategy s : cfg.attack.strategies)
      seeds["attack/" + to_string(s)] = derive_seed(master, "attack/" + to_string(s));
    seeds["train"] = derive_seed(master, "train");
    rj["seeds"] = seeds;
    rj["victim_accuracy"] = report.victim_accuracy;
    ordered_json attacks = ordered_json::array();
    for (const StrategySummary& s : report.attacks)
      attacks.push_back({{"strategy", s.strategy},
                         {"rounds_executed", s.rounds_executed},
                         {"exhausted", s.exhausted},
                         {"seconds", s.seconds},
                         {"final_msb", s.final_msb},
                         {"final_full", s.final_full}});
    rj["attacks"] = attacks;
    if (dominance.has_value()) rj["msb_dominates_allbits"] = *dominance;
    ordered_json arms = ordered_json::array();
    for (const ArmResult& a : report.arms)
      arms.push_back({{"arm", a.arm},
                      {"rounds", a.rounds},
                      {"strategy", a.strategy},
                      {"accuracy", a.metrics.accuracy},
                      {"fidelity", a.metrics.fidelity},
                      {"accuracy_under_attack", a.metrics.accuracy_under_attack}});
    rj["arms"] = arms;
    write_text(dir + "/report.json", rj.dump(2) + "\n");

    std::ostringstream sum;
    sum << "experiment " << report.hash << "\n";
    sum << "victim accuracy: " << fmt_fixed(report.victim_accuracy) << "\n\n";
    for (const StrategySummary& s : report.attacks)
      sum << "attack " << s.strategy << ": rounds=" << s.rounds_executed
          << " exhausted=" << (s.exhausted ? "yes" : "no")
          << " seconds=" << fmt_fixed(s.seconds, 6) << " msb=" << fmt_fixed(s.final_msb, 6)
          << " full=" << fmt_fixed(s.final_full, 6) << "\n";
    if (dominance.has_value())
      sum << "msb dominates allbits at equal time: " << (*dominance ? "yes" : "no") << "\n";
    sum << "\n";
    sum << std::left << std::setw(12) << "arm" << std::right << std::setw(8) << "rounds"
        << "  " << std::left << std::setw(9) << "strategy" << std::right << std::setw(10)
        << "accuracy" << std::setw(10) << "fidelity" << std::setw(14) << "under_attack"
        << "\n";
    for (const ArmResult& a : report.arms)
      sum << std::left << std::setw(12) << a.arm << std::right << std::setw(8) << a.rounds
          << "  " << std::left << std::setw(9) << a.strategy << std::right << std::setw(10)
          << fmt_fixed(a.metrics.accuracy) << std::setw(10) << fmt_fixed(a.metrics.fidelity)
          << std::setw(14) << fmt_fixed(a.metrics.accuracy_under_attack) << "\n";
    write_text(dir + "/summary.txt", sum.str());
  });
  return report;
}

}  // namespace rowsteal
