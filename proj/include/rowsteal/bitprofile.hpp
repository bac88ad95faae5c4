#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rowsteal/mat.hpp"

namespace rowsteal {

class LeakLedger;
struct VictimModel;

/// Per-weight leak record: bit i of `known` says whether code bit i has been
/// recovered; the recovered value sits in bit i of `values`.  Bit 7 is the
/// code's MSB.  Bits never travel from known back to unknown.
struct WeightLeakMask {
  std::uint8_t known = 0;
  std::uint8_t values = 0;

  bool operator==(const WeightLeakMask&) const = default;
};

/// Length of the contiguous known prefix starting at the MSB (0..8).  Known
/// bits below the first gap contribute nothing here.
int filter_prefix(WeightLeakMask mask);

/// Two's-complement code interval consistent with a known k-bit MSB prefix.
struct ProjectedRange {
  int code_min = -128;
  int code_max = 127;
  double mean = 0.0;  // scale * (code_min + code_max) / 2
};

/// `prefix_bits` carries the known bits in their code positions (bits 7..8-k),
/// lower bits zero.  k = 0 yields the full signed range.
ProjectedRange projected_range(std::uint8_t prefix_bits, int k, double scale);
ProjectedRange projected_range(WeightLeakMask mask, double scale);

enum class WeightSetClass : std::uint8_t {
  Full = 1,     // all 8 bits known: exact code
  Partial = 2,  // MSB plus a partial prefix (1..7 bits)
  None = 3,     // nothing usable: no known MSB prefix
};

WeightSetClass classify(int prefix_len);

/// Per-layer projected-interval tensors for the training stage, real-valued
/// (code bounds times the layer scale).
struct LayerRanges {
  Mat w_min;
  Mat w_max;
  Mat w_mean;
  std::vector<std::uint8_t> set_class;  // 1/2/3 per weight, row-major
};

struct RangeTensors {
  std::vector<LayerRanges> layers;

  std::size_t count_class(WeightSetClass c) const;
  std::size_t total_weights() const;
};

/// Collapses the ledger through the prefix filter into range tensors aligned
/// with the victim's layer shapes.
RangeTensors build_range_tensors(const LeakLedger& ledger, const VictimModel& model);

/// CSV export: layer,row,col,prefix_len,code_min,code_max (one row per weight).
std::string profile_to_csv(const LeakLedger& ledger, const VictimModel& model);
void write_profile_csv(const LeakLedger& ledger, const VictimModel& model,
                       const std::string& path);

}  // namespace rowsteal
