#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rowsteal {

/// Row/page layout of the simulated module.  A row holds `pages_per_row`
/// page-sized fragments side by side; bit offsets are row-local.
struct DramGeometry {
  std::size_t rows_total = 0;
  std::size_t pages_per_row = 2;
  std::size_t page_size_bytes = 4096;

  std::size_t bits_per_page() const { return page_size_bytes * 8; }
  std::size_t bits_per_row() const { return pages_per_row * bits_per_page(); }
  std::size_t bytes_per_row() const { return pages_per_row * page_size_bytes; }
  std::size_t total_pages() const { return rows_total * pages_per_row; }

  void validate() const;  // throws ParameterError

  bool operator==(const DramGeometry&) const = default;
};

/// Each physical cell flips in one fixed direction only.
enum class FlipDirection : std::uint8_t { ZeroToOne = 0, OneToZero = 1 };

struct VulnCell {
  std::size_t row = 0;
  std::size_t bit_offset = 0;  // row-local
  FlipDirection direction = FlipDirection::ZeroToOne;

  friend auto operator<=>(const VulnCell&, const VulnCell&) = default;
};

/// Bit content of one row.  Offset b lives in byte b/8; offset 0 is the most
/// significant bit of byte 0, so page bytes keep their in-memory order when
/// written into a row.
class RowBits {
 public:
  RowBits() = default;
  explicit RowBits(std::size_t bits) : bytes_((bits + 7) / 8, 0), bits_(bits) {}

  std::size_t size_bits() const { return bits_; }

  bool get(std::size_t offset) const {
    return (bytes_[offset / 8] >> (7 - offset % 8)) & 1u;
  }
  void set(std::size_t offset, bool v) {
    std::uint8_t m = static_cast<std::uint8_t>(1u << (7 - offset % 8));
    if (v)
      bytes_[offset / 8] |= m;
    else
      bytes_[offset / 8] &= static_cast<std::uint8_t>(~m);
  }

  std::span<std::uint8_t> bytes() { return bytes_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

  bool operator==(const RowBits&) const = default;

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t bits_ = 0;
};

/// Immutable map of vulnerable cells discovered by templating.  Cells are kept
/// sorted by (row, bit_offset) and indexed per row for fast lookup.
class TemplateMap {
 public:
  TemplateMap(DramGeometry geometry, std::uint64_t seed, std::vector<VulnCell> cells);

  const DramGeometry& geometry() const { return geometry_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<VulnCell>& cells() const { return cells_; }
  std::span<const VulnCell> cells_in_row(std::size_t row) const;

 private:
  DramGeometry geometry_;
  std::uint64_t seed_ = 0;
  std::vector<VulnCell> cells_;           // sorted by (row, bit_offset)
  std::vector<std::size_t> row_begin_;    // rows_total + 1 prefix offsets into cells_
};

/// Draws a cell population: each page is vulnerable with probability
/// `frac_vuln_pages`; a vulnerable page gets a Poisson(`mean_cells_per_vuln_page`)
/// count of cells at distinct uniform offsets, each with a fair-coin flip
/// direction.  A mean at or above the page's bit count saturates the page.
TemplateMap generate_template(const DramGeometry& geometry, double frac_vuln_pages,
                              double mean_cells_per_vuln_page, std::uint64_t seed);

/// Double-sided hammering of `row`.  A ZeroToOne cell flips iff the stripe
/// around it reads 1-0-1 (upper, target, lower); a OneToZero cell iff it reads
/// 0-1-0.  With miss_prob > 0, each eligible flip is independently suppressed
/// (requires an rng).  Mutates `target`; returns flipped offsets, ascending.
std::vector<std::size_t> hammer(RowBits& target, const RowBits& upper, const RowBits& lower,
                                std::size_t row, const TemplateMap& tmpl,
                                double miss_prob = 0.0, std::mt19937_64* rng = nullptr);

std::string template_to_string(const TemplateMap& tmpl);
TemplateMap template_from_string(const std::string& text);
void save_template(const TemplateMap& tmpl, const std::string& path);
TemplateMap load_template(const std::string& path);

}  // namespace rowsteal
