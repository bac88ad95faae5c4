#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rowsteal/dram.hpp"

namespace rowsteal {

struct PhysPageId {
  std::size_t row = 0;
  std::size_t slot = 0;  // page index within the row

  friend auto operator<=>(const PhysPageId&, const PhysPageId&) = default;
};

enum class OwnerKind : std::uint8_t { Free, Attacker, Victim, Other };
enum class PageKind : std::uint8_t { Secret, NonSecret };

struct VictimPageTag {
  std::uint64_t logical_index = 0;  // unique within one victim epoch
  PageKind kind = PageKind::NonSecret;
};

/// Per-CPU pageset: a LIFO stack of recently freed frames with a hard
/// capacity.  A push that would exceed capacity spills the pushed entry plus
/// the oldest half of the stack back to the global pool; spilled entries lose
/// their LIFO placement guarantee.
class PcpPageset {
 public:
  explicit PcpPageset(std::size_t capacity = 512);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return stack_.size(); }
  bool empty() const { return stack_.empty(); }

  /// Returns the ids spilled to the global pool (empty unless overflowing).
  std::vector<PhysPageId> push(PhysPageId id);
  std::optional<PhysPageId> pop();
  void clear() { stack_.clear(); }

  /// Bottom-to-top view (top of stack is the last element).
  std::span<const PhysPageId> entries() const { return stack_; }

 private:
  std::size_t capacity_;
  std::vector<PhysPageId> stack_;
};

/// One batched release issued on a victim anchor event.  The victim is about
/// to touch pages_before non-secret pages, then pages_secret secret pages each
/// preceded by its share of pages_inter non-secret pages.  leakable_ids are
/// the destinations for the secret pages: they are released in list order, so
/// under LIFO replay the i-th secret access (0-based) lands on
/// leakable_ids[pages_secret - 1 - i].
struct MassagePlan {
  std::size_t pages_before = 0;
  std::size_t pages_secret = 0;
  std::size_t pages_inter = 0;
  std::vector<PhysPageId> leakable_ids;

  std::size_t total_pages() const { return pages_before + pages_secret + pages_inter; }
};

/// Victim access-kind sequence implied by a massage plan (see MassagePlan).
std::vector<PageKind> massage_access_pattern(const MassagePlan& plan);

/// Release order realizing the plan under LIFO replay: the reverse of the
/// desired placement sequence.  `fillers` must hold at least
/// pages_before + pages_inter frames.
std::vector<PhysPageId> massage_release_order(const MassagePlan& plan,
                                              std::span<const PhysPageId> fillers);

/// Deterministic page-frame state machine: frame ownership, page contents
/// backed by DRAM rows, a swap store for evicted victim pages, and one shared
/// per-CPU pageset.  Every mutating operation appends one line to the event
/// log.
class MemSystem {
 public:
  explicit MemSystem(DramGeometry geometry, std::size_t pageset_capacity = 512);

  const DramGeometry& geometry() const { return geom_; }

  std::size_t frame_index(PhysPageId id) const;
  PhysPageId frame_id(std::size_t index) const;

  OwnerKind owner(PhysPageId id) const;
  std::optional<VictimPageTag> victim_tag(PhysPageId id) const;
  void set_owner_other(PhysPageId id);  // setup helper: reserve a frame as OS-owned

  RowBits& row(std::size_t r);
  const RowBits& row(std::size_t r) const;
  void write_page(PhysPageId id, std::span<const std::uint8_t> bytes);
  std::vector<std::uint8_t> read_page(PhysPageId id) const;

  /// Fills all Free frames and evicts all Victim frames into swap; everything
  /// becomes Attacker-owned (Other frames are untouched).  The pageset is
  /// drained in the process.  Returns the attacker-held frames, ascending.
  std::vector<PhysPageId> exhaust_memory();

  /// Frees attacker-owned frames in the given order, pushing each onto the
  /// pageset.  Throws OwnershipError if any frame is not attacker-owned.
  void release_pages(std::span<const PhysPageId> ordered_ids);

  /// Satisfies victim page faults in order: pops the pageset while it lasts,
  /// then falls back to the lowest-id Free frame.  Swapped content for a tag's
  /// logical index is restored into the frame.  Returns placements in order.
  std::vector<PhysPageId> allocate_for_victim(std::span<const VictimPageTag> tags);

  /// Releases exactly plan.total_pages() frames on a victim anchor event,
  /// ordered so that LIFO replay of the plan's access pattern places the
  /// secret pages on leakable_ids and the rest on deterministically chosen
  /// filler frames.  `fillers` supplies the filler frames (attacker-owned,
  /// disjoint from leakable_ids); pass empty to pick the lowest-id candidates.
  void batched_massage(const std::string& anchor, const MassagePlan& plan,
                       std::span<const PhysPageId> fillers = {});

  std::optional<PhysPageId> victim_frame(std::uint64_t logical_index) const;
  bool swap_holds(std::uint64_t logical_index) const;
  std::size_t swap_size() const { return swap_.size(); }
  std::size_t free_frames() const { return free_count_; }

  PcpPageset& pageset() { return pageset_; }
  const PcpPageset& pageset() const { return pageset_; }

  const std::vector<std::string>& event_log() const { return event_log_; }
  void set_event_logging(bool on) { logging_ = on; }

 private:
  struct Frame {
    OwnerKind owner = OwnerKind::Free;
    std::optional<VictimPageTag> tag;
  };

  void log_event(const std::string& op, const std::string& args, const std::string& placements);
  void make_free(std::size_t index);
  void assign(std::size_t index, OwnerKind owner, std::optional<VictimPageTag> tag);

  DramGeometry geom_;
  std::vector<RowBits> rows_;
  std::vector<Frame> frames_;
  PcpPageset pageset_;
  std::map<std::uint64_t, std::vector<std::uint8_t>> swap_;  // keyed by logical_index
  std::map<std::uint64_t, PhysPageId> victim_placement_;
  std::size_t free_count_ = 0;
  std::uint64_t tick_ = 0;
  bool logging_ = true;
  std::vector<std::string> event_log_;
};

std::string to_string(PhysPageId id);

}  // namespace rowsteal
