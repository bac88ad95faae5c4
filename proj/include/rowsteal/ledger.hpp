#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rowsteal/bitprofile.hpp"
#include "rowsteal/victim.hpp"

namespace rowsteal {

/// Accumulated bit knowledge across attack rounds.  A bit moves from Unknown
/// to Known(value) exactly once and never back; a second observation must
/// agree with the first or the simulation itself is broken (IntegrityError).
class LeakLedger {
 public:
  explicit LeakLedger(const VictimModel& model);

  std::size_t layer_count() const { return shapes_.size(); }
  std::size_t total_weights() const { return total_weights_; }

  bool known(std::size_t layer, std::size_t row, std::size_t col, int bit) const;
  std::optional<int> value(std::size_t layer, std::size_t row, std::size_t col, int bit) const;
  std::optional<std::size_t> round_of(std::size_t layer, std::size_t row, std::size_t col,
                                      int bit) const;
  WeightLeakMask mask(std::size_t layer, std::size_t row, std::size_t col) const;

  /// Records a recovered bit.  Re-recording an agreeing value is a no-op that
  /// keeps the earliest discovery round.
  void set(std::size_t layer, std::size_t row, std::size_t col, int bit, int value,
           std::size_t round);

  std::size_t known_bits() const { return known_bits_; }

  /// Fraction of weights whose MSB prefix is at least `len` (len in 1..8).
  double prefix_fraction(int len) const;

  /// One pass over all weights: index k-1 holds prefix_fraction(k).
  std::array<double, 8> prefix_fractions() const;

  /// Marks every bit of every weight Known with the model's true values
  /// (round 0) -- the white-box degenerate case.
  static LeakLedger full(const VictimModel& model);

  /// Zero-tolerance ground-truth audit; throws IntegrityError on any mismatch.
  void verify_against(const VictimModel& model) const;

  /// Text dump, one `layer,row,col,bit,value,round` record per known bit.
  std::string to_string() const;
  void save(const std::string& path) const;
  static LeakLedger load(const std::string& path, const VictimModel& model);

  bool operator==(const LeakLedger&) const = default;

 private:
  struct Shape {
    std::size_t rows = 0, cols = 0;
    bool operator==(const Shape&) const = default;
  };
  std::size_t weight_index(std::size_t layer, std::size_t row, std::size_t col) const;

  std::vector<Shape> shapes_;
  std::vector<std::size_t> layer_base_;          // flat weight index of each layer's start
  std::size_t total_weights_ = 0;
  std::vector<std::uint8_t> known_;              // per weight, bit i = code bit i known
  std::vector<std::uint8_t> values_;             // per weight
  std::vector<std::uint32_t> rounds_;            // per weight*8, discovery round + 1 (0 = unknown)
  std::size_t known_bits_ = 0;
};

}  // namespace rowsteal
