#include "rowsteal/attack.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "rowsteal/errors.hpp"
#include "rowsteal/rng.hpp"

namespace rowsteal {

std::string to_string(Strategy s) {
  return s == Strategy::MsbPriority ? "msb" : "allbits";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "msb") return Strategy::MsbPriority;
  if (s == "allbits") return Strategy::AllBits;
  throw ParameterError("strategy: expected 'msb' or 'allbits', got '" + s + "'");
}

void CostModel::validate() const {
  if (t_exhaust < 0 || t_release < 0 || t_inference < 0 || t_row_msb < 0 || t_row_allbits < 0)
    throw ParameterError("cost model: all terms must be non-negative");
}

std::string RecoveryCurve::to_csv() const {
  std::ostringstream os;
  os << "round,msb,msb1,msb2,msb3,msb4,msb5,msb6,msb7,full,seconds\n";
  os << std::fixed << std::setprecision(6);
  for (const CurvePoint& p : points) {
    os << p.round << ',' << p.msb;
    for (double f : p.msb_plus) os << ',' << f;
    os << ',' << p.full << ',' << p.seconds << '\n';
  }
  return os.str();
}

void RecoveryCurve::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("curve: cannot open '" + path + "' for writing");
  f << to_csv();
}

AttackSession::AttackSession(const TemplateMap& tmpl, MemSystem& ms, VictimProcess& victim,
                             LeakLedger& ledger, const TraceConfig& trace_cfg)
    : tmpl_(&tmpl), ms_(&ms), victim_(&victim), ledger_(&ledger), trace_cfg_(trace_cfg) {
  if (tmpl.geometry() != ms.geometry())
    throw ParameterError("attack: template and memory system geometries differ");
  trace_ = victim.run_inference_trace(trace_cfg_);

  // One anchor per (interior target row, page column) holding at least one
  // cell.  Cells arrive sorted, so slots group contiguously within a row.
  const DramGeometry& g = tmpl.geometry();
  for (std::size_t r = 1; r + 1 < g.rows_total; ++r) {
    auto cells = tmpl.cells_in_row(r);
    std::size_t i = 0;
    while (i < cells.size()) {
      const std::size_t slot = cells[i].bit_offset / g.bits_per_page();
      Anchor a{r, slot, {}};
      while (i < cells.size() && cells[i].bit_offset / g.bits_per_page() == slot)
        a.cells.push_back(cells[i++]);
      anchors_.push_back(std::move(a));
    }
  }

  const std::size_t pages = victim.packed().page_count();
  candidates_all_.resize(pages);
  candidates_msb_.resize(pages);
  for (std::uint64_t p = 0; p < pages; ++p) {
    for (std::size_t ai = 0; ai < anchors_.size(); ++ai) {
      if (anchor_informative(anchors_[ai], p, Strategy::AllBits))
        candidates_all_[p].push_back(ai);
      if (anchor_informative(anchors_[ai], p, Strategy::MsbPriority))
        candidates_msb_[p].push_back(ai);
    }
  }
}

bool AttackSession::anchor_informative(const Anchor& a, std::uint64_t page,
                                       Strategy strategy) const {
  const std::size_t page_bits = tmpl_->geometry().bits_per_page();
  for (const VulnCell& c : a.cells) {
    const std::size_t k = c.bit_offset - a.slot * page_bits;
    if (strategy == Strategy::MsbPriority && k % 8 != 0) continue;
    const auto coord = victim_->packed().bit_at(page, k);
    if (!coord) continue;
    if (!ledger_->known(coord->layer, coord->row, coord->col, coord->bit_index)) return true;
  }
  return false;
}

std::vector<VulnCell> AttackSession::informative_cells(const Anchor& a, std::uint64_t page) const {
  const std::size_t page_bits = tmpl_->geometry().bits_per_page();
  std::vector<VulnCell> out;
  for (const VulnCell& c : a.cells) {
    const std::size_t k = c.bit_offset - a.slot * page_bits;
    const auto coord = victim_->packed().bit_at(page, k);
    if (!coord) continue;
    if (!ledger_->known(coord->layer, coord->row, coord->col, coord->bit_index))
      out.push_back(c);
  }
  return out;
}

std::optional<RoundPlan> AttackSession::plan_round(Strategy strategy, std::mt19937_64& rng,
                                                   std::size_t max_units_per_round) {
  const DramGeometry& g = tmpl_->geometry();
  const std::size_t pages = victim_->packed().page_count();
  std::size_t budget = max_units_per_round == 0 ? pages : std::min(max_units_per_round, pages);

  RoundPlan plan;
  plan.strategy = strategy;
  std::set<std::size_t> victim_frames;    // frame indices hosting a planned victim page
  std::set<std::size_t> attacker_frames;  // frame indices the attacker must keep presettable
  std::vector<std::size_t> victim_per_row(g.rows_total, 0);

  auto frame_of = [&](std::size_t row, std::size_t slot) {
    return ms_->frame_index({row, slot});
  };
  // Every cell of every target row must be either attacker-presettable or
  // neutralizable through a non-victim neighbor, else hammering would corrupt
  // resident victim pages.
  auto rows_protectable = [&]() {
    for (const TargetUnit& u : plan.targets) {
      for (const VulnCell& c : tmpl_->cells_in_row(u.target_row)) {
        const std::size_t sl = c.bit_offset / g.bits_per_page();
        if (!victim_frames.count(frame_of(u.target_row, sl))) continue;
        if (!victim_frames.count(frame_of(u.target_row - 1, sl))) continue;
        if (!victim_frames.count(frame_of(u.target_row + 1, sl))) continue;
        return false;
      }
    }
    return true;
  };

  auto& cand_lists = strategy == Strategy::MsbPriority ? candidates_msb_ : candidates_all_;
  for (std::uint64_t p = 0; p < pages && plan.targets.size() < budget; ++p) {
    auto& cand = cand_lists[p];
    std::size_t attempts = 0;
    while (!cand.empty() && attempts < 64) {
      std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
      const std::size_t ci = pick(rng);
      const Anchor& a = anchors_[cand[ci]];
      if (!anchor_informative(a, p, strategy)) {
        cand[ci] = cand.back();  // stale: drop lazily, keep sampling uniform
        cand.pop_back();
        continue;
      }
      bool placed = false;
      for (int sigma : {-1, +1}) {
        const std::size_t vr = a.row + static_cast<std::size_t>(sigma);
        const std::size_t ar = a.row - static_cast<std::size_t>(sigma);
        const std::size_t vf = frame_of(vr, a.slot);
        if (victim_frames.count(vf) || attacker_frames.count(vf)) continue;
        if (victim_frames.count(frame_of(a.row, a.slot))) continue;
        if (victim_frames.count(frame_of(ar, a.slot))) continue;
        // The victim aggressor row keeps at least one attacker page so the
        // attacker can still activate it for hammering.
        if (victim_per_row[vr] + 1 > g.pages_per_row - 1) continue;

        plan.targets.push_back({a.row, vr, ar, a.slot, p, informative_cells(a, p)});
        victim_frames.insert(vf);
        if (!rows_protectable()) {
          plan.targets.pop_back();
          victim_frames.erase(vf);
          continue;
        }
        attacker_frames.insert(frame_of(a.row, a.slot));
        attacker_frames.insert(frame_of(ar, a.slot));
        victim_per_row[vr]++;
        placed = true;
        break;
      }
      if (placed) break;
      ++attempts;
    }
  }
  if (plan.targets.empty()) return std::nullopt;  // no informative placement remains

  // Destinations for this round's trace replay: planned pages go to their
  // aggressor frames, everything else parks far from the hammered rows.
  std::set<std::size_t> excluded_rows;
  for (const TargetUnit& u : plan.targets) {
    excluded_rows.insert(u.target_row - 1);
    excluded_rows.insert(u.target_row);
    excluded_rows.insert(u.target_row + 1);
  }
  std::set<std::size_t> used = victim_frames;
  used.insert(attacker_frames.begin(), attacker_frames.end());
  std::size_t park_cursor = 0;
  auto next_park = [&]() -> PhysPageId {
    const std::size_t total = g.total_pages();
    while (park_cursor < total) {
      const PhysPageId id = ms_->frame_id(park_cursor);
      ++park_cursor;
      if (excluded_rows.count(id.row)) continue;
      if (used.count(ms_->frame_index(id))) continue;
      if (ms_->owner(id) == OwnerKind::Other) continue;
      used.insert(ms_->frame_index(id));
      return id;
    }
    throw PlanError("plan_round: no parking frame available");
  };

  std::map<std::uint64_t, PhysPageId> dest;
  for (const TargetUnit& u : plan.targets)
    dest[u.victim_page] = {u.victim_aggressor_row, u.slot};

  for (const TraceEvent& ev : trace_.events) {
    if (ev.anchor != AnchorKind::KernelCreate) continue;
    MassageBatch batch;
    batch.layer = ev.layer;
    std::vector<PhysPageId> access_dest;
    std::vector<PageKind> kinds;
    for (const VictimPageTag& tag : ev.accesses) {
      kinds.push_back(tag.kind);
      if (tag.kind == PageKind::Secret)
        access_dest.push_back(dest.count(tag.logical_index) ? dest[tag.logical_index]
                                                            : next_park());
    }
    batch.plan.pages_before = trace_cfg_.non_secret_before;
    batch.plan.pages_secret = access_dest.size();
    batch.plan.pages_inter = trace_cfg_.non_secret_between * access_dest.size();
    if (massage_access_pattern(batch.plan) != kinds)
      throw IntegrityError("plan_round: massage pattern does not match the trace");
    batch.plan.leakable_ids.assign(access_dest.rbegin(), access_dest.rend());
    for (std::size_t i = 0; i < batch.plan.pages_before + batch.plan.pages_inter; ++i)
      batch.fillers.push_back(next_park());
    const auto order = massage_release_order(batch.plan, batch.fillers);
    plan.release_order.insert(plan.release_order.end(), order.begin(), order.end());
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

RoundStats AttackSession::execute_round(const RoundPlan& plan, const CostModel& cost,
                                        std::size_t round, double miss_prob,
                                        std::mt19937_64* rng) {
  cost.validate();
  const DramGeometry& g = tmpl_->geometry();
  ms_->exhaust_memory();

  std::size_t batch_i = 0;
  for (const TraceEvent& ev : trace_.events) {
    if (ev.anchor == AnchorKind::KernelCreate) {
      if (batch_i >= plan.batches.size() || plan.batches[batch_i].layer != ev.layer)
        throw IntegrityError("execute_round: batch sequence does not match the trace");
      const MassageBatch& b = plan.batches[batch_i++];
      ms_->batched_massage("kernel_create:" + std::to_string(ev.layer), b.plan, b.fillers);
    }
    if (!ev.accesses.empty()) victim_->touch(ev);
  }
  if (batch_i != plan.batches.size())
    throw IntegrityError("execute_round: unused massage batches");

  for (const TargetUnit& u : plan.targets) {
    const auto placed = ms_->victim_frame(u.victim_page);
    if (!placed || placed->row != u.victim_aggressor_row || placed->slot != u.slot)
      throw IntegrityError("execute_round: victim page missed its aggressor frame");
  }

  RoundStats stats;
  for (const TargetUnit& u : plan.targets) {
    const std::size_t r = u.target_row;
    if (ms_->owner({r, u.slot}) == OwnerKind::Victim ||
        ms_->owner({u.attacker_aggressor_row, u.slot}) == OwnerKind::Victim)
      throw IntegrityError("execute_round: preset frame hosts a victim page");

    RowBits& target = ms_->row(r);
    RowBits& arow = ms_->row(u.attacker_aggressor_row);
    std::vector<std::size_t> planned;
    planned.reserve(u.cells_in_play.size());
    for (const VulnCell& c : u.cells_in_play) {
      planned.push_back(c.bit_offset);
      if (c.direction == FlipDirection::ZeroToOne) {
        target.set(c.bit_offset, false);  // cell preset 0; flips iff victim bit is 1
        arow.set(c.bit_offset, true);
      } else {
        target.set(c.bit_offset, true);   // cell preset 1; flips iff victim bit is 0
        arow.set(c.bit_offset, false);
      }
    }
    // Neutralize every unplanned cell of the target row: park the cell at its
    // post-flip value when the attacker owns that page, otherwise break the
    // stripe through a non-victim neighbor.
    for (const VulnCell& c : tmpl_->cells_in_row(r)) {
      if (std::binary_search(planned.begin(), planned.end(), c.bit_offset)) continue;
      const std::size_t sl = c.bit_offset / g.bits_per_page();
      if (ms_->owner({r, sl}) != OwnerKind::Victim) {
        target.set(c.bit_offset, c.direction == FlipDirection::ZeroToOne);
      } else if (ms_->owner({r - 1, sl}) != OwnerKind::Victim) {
        ms_->row(r - 1).set(c.bit_offset, c.direction != FlipDirection::ZeroToOne);
      } else if (ms_->owner({r + 1, sl}) != OwnerKind::Victim) {
        ms_->row(r + 1).set(c.bit_offset, c.direction != FlipDirection::ZeroToOne);
      } else {
        throw IntegrityError("execute_round: unprotectable cell in target row");
      }
    }

    const auto flips = hammer(target, ms_->row(r - 1), ms_->row(r + 1), r, *tmpl_, miss_prob, rng);
    ++stats.rows_hammered;

    for (const VulnCell& c : u.cells_in_play) {
      const bool flipped = std::binary_search(flips.begin(), flips.end(), c.bit_offset);
      // A flip pins the victim bit.  With misses possible, a non-flip is
      // ambiguous (suppressed flip vs. non-flip value) and records nothing:
      // discovery is delayed, never corrupted.  Only at miss_prob == 0 is a
      // non-flip definitive.
      if (!flipped && miss_prob != 0.0) continue;
      const int bit_value =
          c.direction == FlipDirection::ZeroToOne ? (flipped ? 1 : 0) : (flipped ? 0 : 1);
      const std::size_t k = c.bit_offset - u.slot * g.bits_per_page();
      const auto coord = victim_->packed().bit_at(u.victim_page, k);
      if (!coord) throw IntegrityError("execute_round: planned cell maps to padding");
      ledger_->set(coord->layer, coord->row, coord->col, coord->bit_index, bit_value, round);
      ++stats.bits_leaked;
      if (coord->bit_index == 7) ++stats.msb_bits_leaked;
    }
  }
  stats.seconds = cost.round_seconds(plan.strategy, stats.rows_hammered);
  return stats;
}

AttackResult run_attack(const AttackConfig& cfg, const TemplateMap& tmpl, MemSystem& ms,
                        VictimProcess& victim, LeakLedger& ledger) {
  cfg.cost.validate();
  if (!(cfg.miss_prob >= 0.0 && cfg.miss_prob < 1.0))
    throw ParameterError("run_attack: miss_prob must lie in [0, 1)");
  if (!victim.placed()) throw PlacementError("run_attack: victim model was never placed");

  AttackSession session(tmpl, ms, victim, ledger, cfg.trace);
  std::mt19937_64 rng = make_rng(cfg.seed);
  AttackResult res;
  for (std::size_t want : cfg.snapshot_rounds)
    if (want == 0) res.snapshots.emplace(0, ledger);

  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    auto plan = session.plan_round(cfg.strategy, rng, cfg.max_units_per_round);
    if (!plan) {
      res.exhausted = true;
      break;
    }
    const RoundStats st = session.execute_round(*plan, cfg.cost, round, cfg.miss_prob, &rng);
    res.seconds += st.seconds;
    res.rounds_executed = round;

    const auto fr = ledger.prefix_fractions();
    CurvePoint pt;
    pt.round = round;
    pt.msb = fr[0];
    for (int k = 1; k <= 7; ++k) pt.msb_plus[static_cast<std::size_t>(k - 1)] = fr[k];
    pt.full = fr[7];
    pt.seconds = res.seconds;
    res.curve.points.push_back(pt);

    if (std::find(cfg.snapshot_rounds.begin(), cfg.snapshot_rounds.end(), round) !=
        cfg.snapshot_rounds.end())
      res.snapshots.emplace(round, ledger);
  }
  // Budgets past the executed horizon see the final ledger state.
  for (std::size_t want : cfg.snapshot_rounds)
    if (!res.snapshots.count(want)) res.snapshots.emplace(want, ledger);
  return res;
}

}  // namespace rowsteal
