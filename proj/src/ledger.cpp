#include "rowsteal/ledger.hpp"

#include <fstream>
#include <sstream>

#include "rowsteal/errors.hpp"

namespace rowsteal {

LeakLedger::LeakLedger(const VictimModel& model) {
  model.validate();
  for (const QuantizedLayer& l : model.layers) {
    layer_base_.push_back(total_weights_);
    shapes_.push_back({l.rows, l.cols});
    total_weights_ += l.weight_count();
  }
  known_.assign(total_weights_, 0);
  values_.assign(total_weights_, 0);
  rounds_.assign(total_weights_ * 8, 0);
}

std::size_t LeakLedger::weight_index(std::size_t layer, std::size_t row, std::size_t col) const {
  if (layer >= shapes_.size() || row >= shapes_[layer].rows || col >= shapes_[layer].cols)
    throw ParameterError("ledger: weight coordinate out of range");
  return layer_base_[layer] + row * shapes_[layer].cols + col;
}

bool LeakLedger::known(std::size_t layer, std::size_t row, std::size_t col, int bit) const {
  if (bit < 0 || bit > 7) throw ParameterError("ledger: bit index out of range");
  return (known_[weight_index(layer, row, col)] >> bit) & 1u;
}

std::optional<int> LeakLedger::value(std::size_t layer, std::size_t row, std::size_t col,
                                     int bit) const {
  if (!known(layer, row, col, bit)) return std::nullopt;
  return (values_[weight_index(layer, row, col)] >> bit) & 1u;
}

std::optional<std::size_t> LeakLedger::round_of(std::size_t layer, std::size_t row,
                                                std::size_t col, int bit) const {
  if (!known(layer, row, col, bit)) return std::nullopt;
  return rounds_[weight_index(layer, row, col) * 8 + static_cast<std::size_t>(bit)] - 1;
}

WeightLeakMask LeakLedger::mask(std::size_t layer, std::size_t row, std::size_t col) const {
  const std::size_t w = weight_index(layer, row, col);
  return {known_[w], values_[w]};
}

void LeakLedger::set(std::size_t layer, std::size_t row, std::size_t col, int bit, int value,
                     std::size_t round) {
  if (bit < 0 || bit > 7) throw ParameterError("ledger: bit index out of range");
  if (value != 0 && value != 1) throw ParameterError("ledger: bit value must be 0 or 1");
  const std::size_t w = weight_index(layer, row, col);
  const std::uint8_t m = static_cast<std::uint8_t>(1u << bit);
  if (known_[w] & m) {
    const int prior = (values_[w] >> bit) & 1;
    if (prior != value)
      throw IntegrityError("ledger: contradictory leak for layer " + std::to_string(layer) +
                           " weight (" + std::to_string(row) + "," + std::to_string(col) +
                           ") bit " + std::to_string(bit));
    return;  // agreeing re-leak: keep the earliest round
  }
  known_[w] |= m;
  if (value) values_[w] |= m;
  rounds_[w * 8 + static_cast<std::size_t>(bit)] = static_cast<std::uint32_t>(round + 1);
  ++known_bits_;
}

double LeakLedger::prefix_fraction(int len) const {
  if (len < 1 || len > 8) throw ParameterError("ledger: prefix length out of range");
  return prefix_fractions()[static_cast<std::size_t>(len - 1)];
}

std::array<double, 8> LeakLedger::prefix_fractions() const {
  std::array<std::size_t, 9> at_least{};  // counts by exact prefix length
  for (std::size_t w = 0; w < total_weights_; ++w)
    at_least[static_cast<std::size_t>(filter_prefix({known_[w], values_[w]}))]++;
  std::array<double, 8> out{};
  std::size_t cum = 0;
  for (int len = 8; len >= 1; --len) {
    cum += at_least[static_cast<std::size_t>(len)];
    out[static_cast<std::size_t>(len - 1)] =
        total_weights_ ? static_cast<double>(cum) / static_cast<double>(total_weights_) : 0.0;
  }
  return out;
}

LeakLedger LeakLedger::full(const VictimModel& model) {
  LeakLedger led(model);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const QuantizedLayer& layer = model.layers[l];
    for (std::size_t r = 0; r < layer.rows; ++r)
      for (std::size_t c = 0; c < layer.cols; ++c) {
        const std::uint8_t code = static_cast<std::uint8_t>(layer.code(r, c));
        for (int b = 0; b < 8; ++b) led.set(l, r, c, b, (code >> b) & 1, 0);
      }
  }
  return led;
}

void LeakLedger::verify_against(const VictimModel& model) const {
  if (model.layers.size() != shapes_.size())
    throw IntegrityError("ledger: model shape mismatch in audit");
  for (std::size_t l = 0; l < shapes_.size(); ++l) {
    const QuantizedLayer& layer = model.layers[l];
    if (layer.rows != shapes_[l].rows || layer.cols != shapes_[l].cols)
      throw IntegrityError("ledger: model shape mismatch in audit");
    for (std::size_t r = 0; r < layer.rows; ++r)
      for (std::size_t c = 0; c < layer.cols; ++c) {
        const std::size_t w = weight_index(l, r, c);
        const std::uint8_t truth = static_cast<std::uint8_t>(layer.code(r, c));
        if ((values_[w] & known_[w]) != (truth & known_[w]))
          throw IntegrityError("ledger: audit mismatch at layer " + std::to_string(l) +
                               " weight (" + std::to_string(r) + "," + std::to_string(c) + ")");
      }
  }
}

std::string LeakLedger::to_string() const {
  std::ostringstream os;
  os << "ledger " << shapes_.size();
  for (const Shape& s : shapes_) os << ' ' << s.rows << ' ' << s.cols;
  os << '\n';
  for (std::size_t l = 0; l < shapes_.size(); ++l) {
    for (std::size_t r = 0; r < shapes_[l].rows; ++r)
      for (std::size_t c = 0; c < shapes_[l].cols; ++c) {
        const std::size_t w = weight_index(l, r, c);
        for (int b = 7; b >= 0; --b) {
          if (!((known_[w] >> b) & 1u)) continue;
          os << l << ',' << r << ',' << c << ',' << b << ',' << ((values_[w] >> b) & 1u) << ','
             << (rounds_[w * 8 + static_cast<std::size_t>(b)] - 1) << '\n';
        }
      }
  }
  return os.str();
}

void LeakLedger::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("ledger: cannot open '" + path + "' for writing");
  f << to_string();
}

LeakLedger LeakLedger::load(const std::string& path, const VictimModel& model) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("ledger: cannot open '" + path + "'");
  std::string header;
  if (!std::getline(f, header)) throw FormatError("ledger: missing header");
  std::istringstream hs(header);
  std::string magic;
  std::size_t layers = 0;
  if (!(hs >> magic >> layers) || magic != "ledger" || layers != model.layers.size())
    throw FormatError("ledger: header does not match model");
  for (const QuantizedLayer& l : model.layers) {
    std::size_t rows = 0, cols = 0;
    if (!(hs >> rows >> cols) || rows != l.rows || cols != l.cols)
      throw FormatError("ledger: layer shape does not match model");
  }
  LeakLedger led(model);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t l = 0, r = 0, c = 0, round = 0;
    int bit = 0, value = 0;
    char comma = 0;
    if (!(ls >> l >> comma >> r >> comma >> c >> comma >> bit >> comma >> value >> comma >> round))
      throw FormatError("ledger: malformed record '" + line + "'");
    led.set(l, r, c, bit, value, round);
  }
  return led;
}

}  // namespace rowsteal
