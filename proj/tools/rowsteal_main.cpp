#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rowsteal/bitprofile.hpp"
#include "rowsteal/errors.hpp"
#include "rowsteal/experiment.hpp"
#include "rowsteal/ledger.hpp"
#include "rowsteal/rng.hpp"

namespace {

using namespace rowsteal;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::uint64_t> rounds;
  std::string strategy;
};

ExperimentConfig make_config(const CommonOpts& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) cfg.master_seed = *o.seed;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.rounds.empty()) {
    cfg.attack.rounds.assign(o.rounds.begin(), o.rounds.end());
    std::sort(cfg.attack.rounds.begin(), cfg.attack.rounds.end());
    cfg.attack.rounds.erase(std::unique(cfg.attack.rounds.begin(), cfg.attack.rounds.end()),
                            cfg.attack.rounds.end());
  }
  if (!o.strategy.empty()) cfg.attack.strategies = {strategy_from_string(o.strategy)};
  cfg.validate();
  return cfg;
}

// Quantized victim plus biases restored from the float sidecar.
VictimModel load_victim_with_biases(const std::string& dir) {
  VictimModel model = load_model(dir + "/victim.qmodel");
  const TinyNet net = load_net(dir + "/victim.net");
  if (net.layers.size() != model.layers.size())
    throw FormatError("victim.net does not match victim.qmodel");
  model.biases.clear();
  for (const DenseLayer& l : net.layers) model.biases.push_back(l.b);
  model.validate();
  return model;
}

void cmd_template(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  const TemplateMap tmpl = experiment_template(cfg);
  save_template(tmpl, cfg.out_dir + "/template.txt");
  std::cout << "wrote " << cfg.out_dir << "/template.txt (" << tmpl.cells().size()
            << " cells)\n";
}

void cmd_attack(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  VictimModel model;
  if (fs::exists(cfg.out_dir + "/victim.qmodel")) {
    model = load_model(cfg.out_dir + "/victim.qmodel");
  } else {
    model = experiment_victim(cfg);
    save_model(model, cfg.out_dir + "/victim.qmodel");
    save_net(dequantize(model), cfg.out_dir + "/victim.net");
  }
  std::optional<TemplateMap> tmpl;
  if (fs::exists(cfg.out_dir + "/template.txt")) {
    tmpl.emplace(load_template(cfg.out_dir + "/template.txt"));
    if (tmpl->geometry() != cfg.geometry)
      throw FormatError("template.txt geometry differs from the config");
  } else {
    tmpl.emplace(experiment_template(cfg));
    save_template(*tmpl, cfg.out_dir + "/template.txt");
  }
  for (const Strategy s : cfg.attack.strategies) {
    const StrategySummary sum = run_attack_stage(cfg, model, *tmpl, s);
    std::cout << "attack " << sum.strategy << ": rounds=" << sum.rounds_executed
              << " exhausted=" << (sum.exhausted ? "yes" : "no") << " msb=" << sum.final_msb
              << " full=" << sum.final_full << " seconds=" << sum.seconds << "\n";
  }
}

void cmd_profile(const ExperimentConfig& cfg) {
  const VictimModel model = load_model(cfg.out_dir + "/victim.qmodel");
  for (const Strategy s : cfg.attack.strategies)
    for (const std::size_t r : cfg.attack.rounds) {
      const std::string tag = to_string(s) + "_r" + std::to_string(r);
      const LeakLedger ledger = LeakLedger::load(cfg.out_dir + "/ledger_" + tag + ".txt", model);
      write_profile_csv(ledger, model, cfg.out_dir + "/profile_" + tag + ".csv");
      std::cout << "wrote " << cfg.out_dir << "/profile_" << tag << ".csv\n";
    }
}

void cmd_train(const ExperimentConfig& cfg) {
  const VictimModel model = load_victim_with_biases(cfg.out_dir);
  const Dataset attacker = experiment_attacker_set(cfg);
  const LeakLedger empty_ledger(model);
  const LeakLedger full_ledger = LeakLedger::full(model);
  for (const ArmSpec& spec : experiment_arms(cfg)) {
    RangeTensors ranges;
    if (spec.whitebox) {
      ranges = build_range_tensors(full_ledger, model);
    } else if (spec.name == "baseline") {
      ranges = build_range_tensors(empty_ledger, model);
    } else {
      const std::string path =
          cfg.out_dir + "/ledger_" + spec.strategy + "_r" + std::to_string(spec.rounds) + ".txt";
      ranges = build_range_tensors(LeakLedger::load(path, model), model);
    }
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.master_seed, "train");
    tc.train_biases = !spec.whitebox;
    const TinyNet net =
        train_substitute(ranges, attacker, tc, spec.whitebox ? &model.biases : nullptr);
    save_net(net, cfg.out_dir + "/sub_" + arm_tag(spec) + ".net");
    std::cout << "wrote " << cfg.out_dir << "/sub_" << arm_tag(spec) << ".net\n";
  }
}

void cmd_eval(const ExperimentConfig& cfg) {
  const TinyNet victim_net = load_net(cfg.out_dir + "/victim.net");
  const Dataset test_set = experiment_test_set(cfg);
  ExperimentReport report;
  report.hash = config_hash(cfg);
  for (const ArmSpec& spec : experiment_arms(cfg)) {
    const TinyNet net = load_net(cfg.out_dir + "/sub_" + arm_tag(spec) + ".net");
    ArmResult ar;
    ar.arm = spec.name;
    ar.rounds = spec.rounds;
    ar.strategy = spec.strategy;
    ar.metrics = evaluate(victim_net, net, test_set, cfg.pgd);
    report.arms.push_back(ar);
  }
  const std::string csv = metrics_to_csv(report, cfg.master_seed);
  std::ofstream f(cfg.out_dir + "/metrics.csv", std::ios::binary);
  if (!f) throw FormatError("cannot open metrics.csv for writing");
  f << csv;
  std::cout << csv;
}

void cmd_run(const ExperimentConfig& cfg) {
  const ExperimentReport rep = run_experiment(cfg);
  std::cout << "victim accuracy: " << rep.victim_accuracy << "\n";
  for (const StrategySummary& s : rep.attacks)
    std::cout << "attack " << s.strategy << ": rounds=" << s.rounds_executed
              << " msb=" << s.final_msb << " full=" << s.final_full << "\n";
  for (const ArmResult& a : rep.arms)
    std::cout << a.arm << " r" << a.rounds << " " << a.strategy
              << ": accuracy=" << a.metrics.accuracy << " fidelity=" << a.metrics.fidelity
              << " under_attack=" << a.metrics.accuracy_under_attack << "\n";
  std::cout << "wrote " << cfg.out_dir << "/report.json\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rowhammer weight-leak simulation and substitute-training pipeline"};
  app.require_subcommand(1);
  CommonOpts opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "JSON config file");
    sub->add_option("--seed", opts.seed, "master seed override");
    sub->add_option("--out", opts.out, "output directory override");
    sub->add_option("--rounds", opts.rounds, "round budgets (comma separated)")->delimiter(',');
    sub->add_option("--strategy", opts.strategy, "row-selection strategy")
        ->check(CLI::IsMember({"msb", "allbits"}));
  };
  CLI::App* c_template = app.add_subcommand("template", "generate the vulnerable-cell map");
  CLI::App* c_attack = app.add_subcommand("attack", "run the leak rounds");
  CLI::App* c_profile = app.add_subcommand("profile", "project ledgers into weight ranges");
  CLI::App* c_train = app.add_subcommand("train", "train the substitute arms");
  CLI::App* c_eval = app.add_subcommand("eval", "evaluate substitutes against the victim");
  CLI::App* c_run = app.add_subcommand("run", "full pipeline end to end");
  for (CLI::App* sub : {c_template, c_attack, c_profile, c_train, c_eval, c_run})
    add_common(sub);
  CLI11_PARSE(app, argc, argv);

  const struct {
    CLI::App* sub;
    const char* name;
    void (*fn)(const ExperimentConfig&);
  } cmds[] = {
      {c_template, "template", cmd_template}, {c_attack, "attack", cmd_attack},
      {c_profile, "profile", cmd_profile},    {c_train, "train", cmd_train},
      {c_eval, "eval", cmd_eval},             {c_run, "run", cmd_run},
  };
  for (const auto& c : cmds) {
    if (!c.sub->parsed()) continue;
    ExperimentConfig cfg;
    try {
      cfg = make_config(opts);
    } catch (const std::exception& e) {
      std::cerr << "error: stage config failed: " << e.what() << "\n";
      return 1;
    }
    try {
      c.fn(cfg);
      return 0;
    } catch (const StageFault& e) {
      std::cerr << "error [config " << config_hash(cfg) << "]: stage " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error [config " << config_hash(cfg) << "]: stage " << c.name
                << " failed: " << e.what() << "\n";
      return 1;
    }
  }
  return 0;
}
