#pragma once

#include <cstddef>
#include <vector>

namespace rowsteal {

/// Minimal row-major double matrix; just enough for the training engine.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  std::size_t size() const { return v.size(); }

  bool operator==(const Mat&) const = default;
};

}  // namespace rowsteal
