#include "rowsteal/bitprofile.hpp"

#include <fstream>
#include <sstream>

#include "rowsteal/errors.hpp"
#include "rowsteal/ledger.hpp"

namespace rowsteal {

int filter_prefix(WeightLeakMask mask) {
  int k = 0;
  for (int bit = 7; bit >= 0; --bit) {
    if (!((mask.known >> bit) & 1u)) break;
    ++k;
  }
  return k;
}

ProjectedRange projected_range(std::uint8_t prefix_bits, int k, double scale) {
  if (k < 0 || k > 8) throw ParameterError("projected_range: prefix length out of range");
  if (!(scale > 0.0)) throw ParameterError("projected_range: scale must be positive");
  ProjectedRange out;
  if (k == 0) {
    // Nothing known, not even the sign: the whole signed code space.
    out.code_min = -128;
    out.code_max = 127;
  } else {
    // The sign bit is inside the prefix, so filling the low bits with zeros
    // and ones gives the interval endpoints directly in two's complement.
    const std::uint8_t keep = static_cast<std::uint8_t>(0xffu << (8 - k));
    const std::uint8_t lo = prefix_bits & keep;
    const std::uint8_t hi = static_cast<std::uint8_t>(lo | static_cast<std::uint8_t>(~keep));
    out.code_min = static_cast<std::int8_t>(lo);
    out.code_max = static_cast<std::int8_t>(hi);
  }
  out.mean = scale * (out.code_min + out.code_max) / 2.0;
  return out;
}

ProjectedRange projected_range(WeightLeakMask mask, double scale) {
  return projected_range(mask.values, filter_prefix(mask), scale);
}

WeightSetClass classify(int prefix_len) {
  if (prefix_len < 0 || prefix_len > 8)
    throw ParameterError("classify: prefix length out of range");
  if (prefix_len == 8) return WeightSetClass::Full;
  if (prefix_len >= 1) return WeightSetClass::Partial;
  return WeightSetClass::None;
}

std::size_t RangeTensors::count_class(WeightSetClass c) const {
  std::size_t n = 0;
  for (const LayerRanges& l : layers)
    for (std::uint8_t s : l.set_class)
      if (s == static_cast<std::uint8_t>(c)) ++n;
  return n;
}

std::size_t RangeTensors::total_weights() const {
  std::size_t n = 0;
  for (const LayerRanges& l : layers) n += l.set_class.size();
  return n;
}

RangeTensors build_range_tensors(const LeakLedger& ledger, const VictimModel& model) {
  model.validate();
  RangeTensors out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const QuantizedLayer& layer = model.layers[l];
    LayerRanges lr;
    lr.w_min = Mat(layer.rows, layer.cols);
    lr.w_max = Mat(layer.rows, layer.cols);
    lr.w_mean = Mat(layer.rows, layer.cols);
    lr.set_class.assign(layer.weight_count(), 0);
    for (std::size_t r = 0; r < layer.rows; ++r) {
      for (std::size_t c = 0; c < layer.cols; ++c) {
        const WeightLeakMask m = ledger.mask(l, r, c);
        const int k = filter_prefix(m);
        const ProjectedRange pr = projected_range(m.values, k, layer.scale);
        lr.w_min.at(r, c) = layer.scale * pr.code_min;
        lr.w_max.at(r, c) = layer.scale * pr.code_max;
        lr.w_mean.at(r, c) = pr.mean;
        lr.set_class[r * layer.cols + c] = static_cast<std::uint8_t>(classify(k));
      }
    }
    out.layers.push_back(std::move(lr));
  }
  return out;
}

std::string profile_to_csv(const LeakLedger& ledger, const VictimModel& model) {
  std::ostringstream os;
  os << "layer,row,col,prefix_len,code_min,code_max\n";
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const QuantizedLayer& layer = model.layers[l];
    for (std::size_t r = 0; r < layer.rows; ++r)
      for (std::size_t c = 0; c < layer.cols; ++c) {
        const WeightLeakMask m = ledger.mask(l, r, c);
        const int k = filter_prefix(m);
        const ProjectedRange pr = projected_range(m.values, k, layer.scale);
        os << l << ',' << r << ',' << c << ',' << k << ',' << pr.code_min << ',' << pr.code_max
           << '\n';
      }
  }
  return os.str();
}

void write_profile_csv(const LeakLedger& ledger, const VictimModel& model,
                       const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("profile: cannot open '" + path + "' for writing");
  f << profile_to_csv(ledger, model);
}

}  // namespace rowsteal
