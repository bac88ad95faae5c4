#include "rowsteal/memsys.hpp"

#include <algorithm>
#include <sstream>

#include "rowsteal/errors.hpp"

namespace rowsteal {

std::string to_string(PhysPageId id) {
  return std::to_string(id.row) + ":" + std::to_string(id.slot);
}

namespace {

std::string join_ids(std::span<const PhysPageId> ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ',';
    s += to_string(ids[i]);
  }
  return s;
}

}  // namespace

PcpPageset::PcpPageset(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ParameterError("pageset: capacity must be positive");
}

std::vector<PhysPageId> PcpPageset::push(PhysPageId id) {
  std::vector<PhysPageId> spilled;
  if (stack_.size() == capacity_) {
    // Overflow: the pushed entry and the oldest half of the stack go back to
    // the global pool and lose their LIFO ordering.
    spilled.push_back(id);
    const std::size_t drop = capacity_ / 2;
    spilled.insert(spilled.end(), stack_.begin(), stack_.begin() + drop);
    stack_.erase(stack_.begin(), stack_.begin() + drop);
    return spilled;
  }
  stack_.push_back(id);
  return spilled;
}

std::optional<PhysPageId> PcpPageset::pop() {
  if (stack_.empty()) return std::nullopt;
  PhysPageId id = stack_.back();
  stack_.pop_back();
  return id;
}

std::vector<PageKind> massage_access_pattern(const MassagePlan& plan) {
  std::vector<PageKind> kinds;
  kinds.reserve(plan.total_pages());
  for (std::size_t i = 0; i < plan.pages_before; ++i) kinds.push_back(PageKind::NonSecret);
  if (plan.pages_secret == 0) {
    for (std::size_t i = 0; i < plan.pages_inter; ++i) kinds.push_back(PageKind::NonSecret);
    return kinds;
  }
  const std::size_t base = plan.pages_inter / plan.pages_secret;
  const std::size_t rem = plan.pages_inter % plan.pages_secret;
  for (std::size_t s = 0; s < plan.pages_secret; ++s) {
    const std::size_t before_this = base + (s < rem ? 1 : 0);
    for (std::size_t i = 0; i < before_this; ++i) kinds.push_back(PageKind::NonSecret);
    kinds.push_back(PageKind::Secret);
  }
  return kinds;
}

std::vector<PhysPageId> massage_release_order(const MassagePlan& plan,
                                              std::span<const PhysPageId> fillers) {
  if (plan.leakable_ids.size() < plan.pages_secret)
    throw PlanError("massage: fewer leakable frames than secret pages");
  if (fillers.size() < plan.pages_before + plan.pages_inter)
    throw PlanError("massage: not enough filler frames");
  // Desired placement per access, then released in reverse so LIFO replay
  // realizes it.  Secret access i lands on leakable_ids[pages_secret - 1 - i],
  // which releases the leakable frames in their given order.
  const std::vector<PageKind> pattern = massage_access_pattern(plan);
  std::vector<PhysPageId> desired(pattern.size());
  std::size_t secret_seen = 0, filler_used = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == PageKind::Secret)
      desired[i] = plan.leakable_ids[plan.pages_secret - 1 - secret_seen++];
    else
      desired[i] = fillers[filler_used++];
  }
  return {desired.rbegin(), desired.rend()};
}

MemSystem::MemSystem(DramGeometry geometry, std::size_t pageset_capacity)
    : geom_(geometry), pageset_(pageset_capacity) {
  geom_.validate();
  rows_.assign(geom_.rows_total, RowBits(geom_.bits_per_row()));
  frames_.assign(geom_.total_pages(), Frame{});
  free_count_ = frames_.size();
}

std::size_t MemSystem::frame_index(PhysPageId id) const {
  if (id.row >= geom_.rows_total || id.slot >= geom_.pages_per_row)
    throw ParameterError("memsys: frame id out of range (" + to_string(id) + ")");
  return id.row * geom_.pages_per_row + id.slot;
}

PhysPageId MemSystem::frame_id(std::size_t index) const {
  return {index / geom_.pages_per_row, index % geom_.pages_per_row};
}

OwnerKind MemSystem::owner(PhysPageId id) const { return frames_[frame_index(id)].owner; }

std::optional<VictimPageTag> MemSystem::victim_tag(PhysPageId id) const {
  return frames_[frame_index(id)].tag;
}

void MemSystem::set_owner_other(PhysPageId id) {
  Frame& f = frames_[frame_index(id)];
  if (f.owner != OwnerKind::Free)
    throw OwnershipError("memsys: only a free frame can be reserved as other-owned");
  f.owner = OwnerKind::Other;
  --free_count_;
  log_event("reserve_other", to_string(id), "");
}

RowBits& MemSystem::row(std::size_t r) {
  if (r >= geom_.rows_total) throw ParameterError("memsys: row out of range");
  return rows_[r];
}

const RowBits& MemSystem::row(std::size_t r) const {
  if (r >= geom_.rows_total) throw ParameterError("memsys: row out of range");
  return rows_[r];
}

void MemSystem::write_page(PhysPageId id, std::span<const std::uint8_t> bytes) {
  if (bytes.size() > geom_.page_size_bytes)
    throw ParameterError("memsys: page content larger than a page");
  auto dst = rows_[id.row].bytes().subspan(id.slot * geom_.page_size_bytes, geom_.page_size_bytes);
  std::fill(dst.begin(), dst.end(), std::uint8_t{0});
  std::copy(bytes.begin(), bytes.end(), dst.begin());
}

std::vector<std::uint8_t> MemSystem::read_page(PhysPageId id) const {
  auto src = rows_[id.row].bytes().subspan(id.slot * geom_.page_size_bytes, geom_.page_size_bytes);
  return {src.begin(), src.end()};
}

void MemSystem::log_event(const std::string& op, const std::string& args,
                          const std::string& placements) {
  const std::uint64_t tick = tick_++;
  if (!logging_) return;
  std::ostringstream os;
  os << "{\"tick\":" << tick << ",\"op\":\"" << op << "\",\"args\":\"" << args
     << "\",\"placements\":\"" << placements << "\"}";
  event_log_.push_back(os.str());
}

void MemSystem::make_free(std::size_t index) {
  Frame& f = frames_[index];
  f.owner = OwnerKind::Free;
  f.tag.reset();
  ++free_count_;
}

void MemSystem::assign(std::size_t index, OwnerKind owner, std::optional<VictimPageTag> tag) {
  Frame& f = frames_[index];
  if (f.owner == OwnerKind::Free) --free_count_;
  f.owner = owner;
  f.tag = std::move(tag);
}

std::vector<PhysPageId> MemSystem::exhaust_memory() {
  pageset_.clear();  // the allocation flood consumes every cached free frame
  std::size_t grabbed = 0, evicted = 0;
  std::vector<PhysPageId> held;
  held.reserve(frames_.size());
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    Frame& f = frames_[i];
    if (f.owner == OwnerKind::Free) {
      assign(i, OwnerKind::Attacker, std::nullopt);
      ++grabbed;
    } else if (f.owner == OwnerKind::Victim) {
      const PhysPageId id = frame_id(i);
      swap_[f.tag->logical_index] = read_page(id);
      victim_placement_.erase(f.tag->logical_index);
      assign(i, OwnerKind::Attacker, std::nullopt);
      ++evicted;
    }
    if (frames_[i].owner == OwnerKind::Attacker) held.push_back(frame_id(i));
  }
  log_event("exhaust", "grabbed=" + std::to_string(grabbed) + " evicted=" + std::to_string(evicted),
            "");
  return held;
}

void MemSystem::release_pages(std::span<const PhysPageId> ordered_ids) {
  for (PhysPageId id : ordered_ids) {
    if (frames_[frame_index(id)].owner != OwnerKind::Attacker)
      throw OwnershipError("release_pages: frame " + to_string(id) + " is not attacker-owned");
  }
  for (PhysPageId id : ordered_ids) {
    make_free(frame_index(id));
    pageset_.push(id);  // spilled entries simply stay free in the global pool
  }
  log_event("release", join_ids(ordered_ids), "");
}

std::vector<PhysPageId> MemSystem::allocate_for_victim(std::span<const VictimPageTag> tags) {
  std::vector<PhysPageId> placements;
  placements.reserve(tags.size());
  for (const VictimPageTag& tag : tags) {
    if (victim_placement_.count(tag.logical_index))
      throw IntegrityError("allocate_for_victim: logical index " +
                           std::to_string(tag.logical_index) + " already resident");
    PhysPageId id{};
    if (auto cached = pageset_.pop()) {
      id = *cached;
      if (frames_[frame_index(id)].owner != OwnerKind::Free)
        throw IntegrityError("allocate_for_victim: pageset entry " + to_string(id) +
                             " is not free");
    } else {
      bool found = false;
      for (std::size_t i = 0; i < frames_.size(); ++i) {
        if (frames_[i].owner == OwnerKind::Free) {
          id = frame_id(i);
          found = true;
          break;
        }
      }
      if (!found) throw OutOfMemoryError("allocate_for_victim: no free frame available");
    }
    assign(frame_index(id), OwnerKind::Victim, tag);
    auto it = swap_.find(tag.logical_index);
    if (it != swap_.end()) {
      write_page(id, it->second);
      swap_.erase(it);
    } else {
      write_page(id, {});  // fresh anonymous page: zero-filled
    }
    victim_placement_[tag.logical_index] = id;
    placements.push_back(id);
  }
  std::string args;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i) args += ',';
    args += (tags[i].kind == PageKind::Secret ? "s" : "n") + std::to_string(tags[i].logical_index);
  }
  log_event("allocate", args, join_ids(placements));
  return placements;
}

void MemSystem::batched_massage(const std::string& anchor, const MassagePlan& plan,
                                std::span<const PhysPageId> fillers) {
  const std::size_t total = plan.total_pages();
  if (total > pageset_.capacity())
    throw PlanError("batched_massage: plan of " + std::to_string(total) +
                    " pages exceeds pageset capacity " + std::to_string(pageset_.capacity()) +
                    "; split the plan");
  if (plan.leakable_ids.size() < plan.pages_secret)
    throw PlanError("batched_massage: fewer leakable frames than secret pages");

  const std::size_t filler_need = plan.pages_before + plan.pages_inter;
  std::vector<PhysPageId> filler_pool;
  if (!fillers.empty()) {
    if (fillers.size() < filler_need)
      throw PlanError("batched_massage: not enough filler frames supplied");
    filler_pool.assign(fillers.begin(), fillers.begin() + filler_need);
  } else {
    for (std::size_t i = 0; i < frames_.size() && filler_pool.size() < filler_need; ++i) {
      if (frames_[i].owner != OwnerKind::Attacker) continue;
      const PhysPageId id = frame_id(i);
      if (std::find(plan.leakable_ids.begin(), plan.leakable_ids.end(), id) !=
          plan.leakable_ids.end())
        continue;
      filler_pool.push_back(id);
    }
    if (filler_pool.size() < filler_need)
      throw PlanError("batched_massage: not enough attacker frames for fillers");
  }

  const std::vector<PhysPageId> release_order = massage_release_order(plan, filler_pool);
  release_pages(release_order);
  log_event("massage", anchor + " b=" + std::to_string(plan.pages_before) +
                           " s=" + std::to_string(plan.pages_secret) +
                           " i=" + std::to_string(plan.pages_inter),
            join_ids(release_order));
}

std::optional<PhysPageId> MemSystem::victim_frame(std::uint64_t logical_index) const {
  auto it = victim_placement_.find(logical_index);
  if (it == victim_placement_.end()) return std::nullopt;
  return it->second;
}

bool MemSystem::swap_holds(std::uint64_t logical_index) const {
  return swap_.count(logical_index) != 0;
}

}  // namespace rowsteal
