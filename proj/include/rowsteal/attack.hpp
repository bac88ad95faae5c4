#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rowsteal/dram.hpp"
#include "rowsteal/ledger.hpp"
#include "rowsteal/memsys.hpp"
#include "rowsteal/victim.hpp"

namespace rowsteal {

/// Row-selection policy.  AllBits treats any unknown aligned bit as worth a
/// placement; MsbPriority only schedules placements that recover at least one
/// unknown MSB (everything aligned still leaks once the row is hammered).
enum class Strategy : std::uint8_t { AllBits, MsbPriority };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

/// Wall-clock model for one round, in seconds.  Exhaust/release/inference are
/// per-round constants; hammering is charged per hammered row at a
/// per-strategy rate.
struct CostModel {
  double t_exhaust = 12.0;
  double t_release = 21.0;
  double t_inference = 1.0;
  double t_row_msb = 239.0 / 11000.0;
  double t_row_allbits = 375.0 / 17000.0;

  double per_row(Strategy s) const {
    return s == Strategy::MsbPriority ? t_row_msb : t_row_allbits;
  }
  double round_seconds(Strategy s, std::size_t rows_hammered) const {
    return t_exhaust + t_release + t_inference +
           per_row(s) * static_cast<double>(rows_hammered);
  }
  void validate() const;  // throws ParameterError on negative terms
};

/// One scheduled leak: the victim page sits in one aggressor row of the
/// target, the attacker controls the other aggressor and the target row
/// itself, and every cell in cells_in_play reads out one victim bit.
struct TargetUnit {
  std::size_t target_row = 0;
  std::size_t victim_aggressor_row = 0;
  std::size_t attacker_aggressor_row = 0;
  std::size_t slot = 0;               // page column shared by cells and victim page
  std::uint64_t victim_page = 0;      // logical weight page placed on the aggressor
  std::vector<VulnCell> cells_in_play;
};

struct MassageBatch {
  std::size_t layer = 0;
  MassagePlan plan;
  std::vector<PhysPageId> fillers;
};

struct RoundPlan {
  Strategy strategy = Strategy::MsbPriority;
  std::vector<TargetUnit> targets;
  std::vector<MassageBatch> batches;        // one per layer, trace order
  std::vector<PhysPageId> release_order;    // concatenation of the batch releases
};

struct RoundStats {
  std::size_t bits_leaked = 0;
  std::size_t msb_bits_leaked = 0;
  std::size_t rows_hammered = 0;
  double seconds = 0.0;
};

struct CurvePoint {
  std::size_t round = 0;
  double msb = 0.0;                   // fraction of weights with a known MSB
  std::array<double, 7> msb_plus{};   // [k-1] = fraction with prefix >= k+1
  double full = 0.0;                  // fraction fully recovered
  double seconds = 0.0;               // cumulative simulated seconds
};

struct RecoveryCurve {
  std::vector<CurvePoint> points;

  std::string to_csv() const;
  void save(const std::string& path) const;
};

struct AttackConfig {
  std::size_t rounds = 1000;
  Strategy strategy = Strategy::MsbPriority;
  CostModel cost;
  TraceConfig trace;
  // Per-flip suppression probability.  Above zero, only observed flips are
  // recorded (a silent miss is indistinguishable from the non-flip value), so
  // recovery slows down but stays sound.
  double miss_prob = 0.0;
  std::uint64_t seed = 0;
  std::size_t max_units_per_round = 0;        // 0 = up to one per weight page
  std::vector<std::size_t> snapshot_rounds;   // ledger copies at these rounds
};

struct AttackResult {
  RecoveryCurve curve;
  std::map<std::size_t, LeakLedger> snapshots;
  std::size_t rounds_executed = 0;
  bool exhausted = false;  // no informative placement remained
  double seconds = 0.0;
};

/// Cross-round attack state: per-page candidate rows maintained with lazy
/// invalidation as the ledger fills.
class AttackSession {
 public:
  AttackSession(const TemplateMap& tmpl, MemSystem& ms, VictimProcess& victim,
                LeakLedger& ledger, const TraceConfig& trace_cfg);

  /// Chooses this round's target units and derives the massage batches.
  /// Returns nullopt when no page has an informative row left (exhaustion).
  std::optional<RoundPlan> plan_round(Strategy strategy, std::mt19937_64& rng,
                                      std::size_t max_units_per_round = 0);

  /// Plays one round end to end: memory exhaustion, batched releases on the
  /// victim's anchor events, trace replay, placement verification, hammering,
  /// and ledger recording.
  RoundStats execute_round(const RoundPlan& plan, const CostModel& cost, std::size_t round,
                           double miss_prob = 0.0, std::mt19937_64* rng = nullptr);

  const InferenceTrace& trace() const { return trace_; }

 private:
  struct Anchor {
    std::size_t row = 0;
    std::size_t slot = 0;
    std::vector<VulnCell> cells;
  };

  bool anchor_informative(const Anchor& a, std::uint64_t page, Strategy strategy) const;
  std::vector<VulnCell> informative_cells(const Anchor& a, std::uint64_t page) const;

  const TemplateMap* tmpl_;
  MemSystem* ms_;
  VictimProcess* victim_;
  LeakLedger* ledger_;
  TraceConfig trace_cfg_;
  InferenceTrace trace_;
  std::vector<Anchor> anchors_;
  // Per page, indices into anchors_ that may still be informative; stale
  // entries are dropped when sampled.
  std::vector<std::vector<std::size_t>> candidates_all_;
  std::vector<std::vector<std::size_t>> candidates_msb_;
};

/// Runs the configured number of rounds (stopping early on exhaustion),
/// recording one curve point per round and ledger snapshots at the requested
/// rounds.  The victim must already be placed.
AttackResult run_attack(const AttackConfig& cfg, const TemplateMap& tmpl, MemSystem& ms,
                        VictimProcess& victim, LeakLedger& ledger);

}  // namespace rowsteal
