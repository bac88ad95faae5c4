#include "rowsteal/dram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "rowsteal/errors.hpp"

namespace rowsteal {

void DramGeometry::validate() const {
  if (rows_total == 0) throw ParameterError("geometry: rows_total must be positive");
  if (pages_per_row == 0) throw ParameterError("geometry: pages_per_row must be positive");
  if (page_size_bytes == 0 || (page_size_bytes & (page_size_bytes - 1)) != 0)
    throw ParameterError("geometry: page_size_bytes must be a positive power of two");
}

TemplateMap::TemplateMap(DramGeometry geometry, std::uint64_t seed, std::vector<VulnCell> cells)
    : geometry_(geometry), seed_(seed), cells_(std::move(cells)) {
  geometry_.validate();
  std::sort(cells_.begin(), cells_.end());
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const VulnCell& c = cells_[i];
    if (c.row >= geometry_.rows_total)
      throw ParameterError("template: cell row out of range");
    if (c.bit_offset >= geometry_.bits_per_row())
      throw ParameterError("template: cell bit offset out of range");
    if (i > 0 && cells_[i - 1].row == c.row && cells_[i - 1].bit_offset == c.bit_offset)
      throw ParameterError("template: duplicate cell position");
  }
  row_begin_.assign(geometry_.rows_total + 1, 0);
  for (const VulnCell& c : cells_) row_begin_[c.row + 1]++;
  for (std::size_t r = 0; r < geometry_.rows_total; ++r) row_begin_[r + 1] += row_begin_[r];
}

std::span<const VulnCell> TemplateMap::cells_in_row(std::size_t row) const {
  if (row >= geometry_.rows_total) throw ParameterError("template: row out of range");
  return {cells_.data() + row_begin_[row], row_begin_[row + 1] - row_begin_[row]};
}

namespace {

// k distinct values from [0, n).  Rejection for sparse draws, complement
// rejection for dense ones, so both regimes stay O(k log k)-ish.
std::vector<std::size_t> sample_distinct(std::size_t k, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (k == 0) return out;
  if (k >= n) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::unordered_set<std::size_t> seen;
  if (k * 2 <= n) {
    seen.reserve(k * 2);
    while (seen.size() < k) seen.insert(pick(rng));
  } else {
    std::size_t drop = n - k;
    seen.reserve(drop * 2);
    std::unordered_set<std::size_t> dropped;
    dropped.reserve(drop * 2);
    while (dropped.size() < drop) dropped.insert(pick(rng));
    out.reserve(k);
    for (std::size_t v = 0; v < n; ++v)
      if (!dropped.count(v)) out.push_back(v);
    return out;
  }
  out.assign(seen.begin(), seen.end());
  return out;
}

}  // namespace

TemplateMap generate_template(const DramGeometry& geometry, double frac_vuln_pages,
                              double mean_cells_per_vuln_page, std::uint64_t seed) {
  geometry.validate();
  if (!(frac_vuln_pages >= 0.0 && frac_vuln_pages <= 1.0))
    throw ParameterError("generate_template: frac_vuln_pages must lie in [0, 1]");
  if (!(mean_cells_per_vuln_page > 0.0) || !std::isfinite(mean_cells_per_vuln_page))
    throw ParameterError("generate_template: mean_cells_per_vuln_page must be positive");

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution page_vuln(frac_vuln_pages);
  const std::size_t page_bits = geometry.bits_per_page();
  const bool saturated = mean_cells_per_vuln_page >= static_cast<double>(page_bits);
  std::poisson_distribution<std::uint64_t> cell_count(mean_cells_per_vuln_page);
  std::bernoulli_distribution coin(0.5);

  std::vector<VulnCell> cells;
  for (std::size_t row = 0; row < geometry.rows_total; ++row) {
    for (std::size_t slot = 0; slot < geometry.pages_per_row; ++slot) {
      if (!page_vuln(rng)) continue;
      std::size_t count =
          saturated ? page_bits
                    : static_cast<std::size_t>(std::min<std::uint64_t>(cell_count(rng), page_bits));
      const std::size_t base = slot * page_bits;
      for (std::size_t off : sample_distinct(count, page_bits, rng)) {
        cells.push_back({row, base + off,
                         coin(rng) ? FlipDirection::OneToZero : FlipDirection::ZeroToOne});
      }
    }
  }
  return TemplateMap(geometry, seed, std::move(cells));
}

std::vector<std::size_t> hammer(RowBits& target, const RowBits& upper, const RowBits& lower,
                                std::size_t row, const TemplateMap& tmpl, double miss_prob,
                                std::mt19937_64* rng) {
  const std::size_t row_bits = tmpl.geometry().bits_per_row();
  if (target.size_bits() != row_bits || upper.size_bits() != row_bits ||
      lower.size_bits() != row_bits)
    throw ParameterError("hammer: row width does not match template geometry");
  if (!(miss_prob >= 0.0 && miss_prob < 1.0))
    throw ParameterError("hammer: miss_prob must lie in [0, 1)");
  if (miss_prob > 0.0 && rng == nullptr)
    throw ParameterError("hammer: miss_prob > 0 requires an rng");

  std::vector<std::size_t> flipped;
  for (const VulnCell& c : tmpl.cells_in_row(row)) {
    const bool t = target.get(c.bit_offset);
    const bool u = upper.get(c.bit_offset);
    const bool l = lower.get(c.bit_offset);
    bool eligible = false;
    bool new_value = t;
    if (c.direction == FlipDirection::ZeroToOne) {
      eligible = !t && u && l;  // 1-0-1 stripe
      new_value = true;
    } else {
      eligible = t && !u && !l;  // 0-1-0 stripe
      new_value = false;
    }
    if (!eligible) continue;
    if (miss_prob > 0.0) {
      std::bernoulli_distribution miss(miss_prob);
      if (miss(*rng)) continue;
    }
    target.set(c.bit_offset, new_value);
    flipped.push_back(c.bit_offset);
  }
  return flipped;  // template cells are sorted, so offsets come out ascending
}

std::string template_to_string(const TemplateMap& tmpl) {
  std::ostringstream os;
  const DramGeometry& g = tmpl.geometry();
  os << "template " << g.rows_total << ' ' << g.pages_per_row << ' ' << g.page_size_bytes << ' '
     << tmpl.seed() << '\n';
  for (const VulnCell& c : tmpl.cells()) {
    os << c.row << ' ' << c.bit_offset << ' '
       << (c.direction == FlipDirection::ZeroToOne ? "0to1" : "1to0") << '\n';
  }
  return os.str();
}

TemplateMap template_from_string(const std::string& text) {
  std::istringstream is(text);
  std::string magic;
  DramGeometry g;
  std::uint64_t seed = 0;
  if (!(is >> magic >> g.rows_total >> g.pages_per_row >> g.page_size_bytes >> seed) ||
      magic != "template")
    throw FormatError("template: malformed header");
  std::vector<VulnCell> cells;
  std::size_t row = 0, off = 0;
  std::string dir;
  while (is >> row >> off >> dir) {
    if (dir == "0to1")
      cells.push_back({row, off, FlipDirection::ZeroToOne});
    else if (dir == "1to0")
      cells.push_back({row, off, FlipDirection::OneToZero});
    else
      throw FormatError("template: bad direction token '" + dir + "'");
  }
  if (!is.eof()) throw FormatError("template: trailing garbage in cell records");
  try {
    return TemplateMap(g, seed, std::move(cells));
  } catch (const ParameterError& e) {
    throw FormatError(std::string("template: ") + e.what());
  }
}

void save_template(const TemplateMap& tmpl, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("template: cannot open '" + path + "' for writing");
  f << template_to_string(tmpl);
}

TemplateMap load_template(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("template: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return template_from_string(buf.str());
}

}  // namespace rowsteal
