#include "rowsteal/victim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rowsteal/errors.hpp"

namespace rowsteal {

std::size_t VictimModel::total_weights() const {
  std::size_t n = 0;
  for (const QuantizedLayer& l : layers) n += l.weight_count();
  return n;
}

void VictimModel::validate() const {
  if (layers.empty()) throw ParameterError("model: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const QuantizedLayer& l = layers[i];
    if (l.rows == 0 || l.cols == 0) throw ParameterError("model: empty layer");
    if (l.codes.size() != l.rows * l.cols)
      throw ParameterError("model: code buffer does not match dims");
    if (!(l.scale > 0.0) || !std::isfinite(l.scale))
      throw ParameterError("model: scale must be a positive real");
    if (i + 1 < layers.size() && layers[i + 1].cols != l.rows)
      throw ParameterError("model: consecutive layer dims do not chain");
  }
  if (!biases.empty()) {
    if (biases.size() != layers.size()) throw ParameterError("model: bias count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (biases[i].size() != layers[i].rows)
        throw ParameterError("model: bias length does not match layer rows");
  }
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& s;
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos >= s.size()) throw FormatError("model: truncated file");
    return static_cast<std::uint8_t>(s[pos++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

constexpr char kModelMagic[4] = {'q', 'n', 'e', 't'};

}  // namespace

void save_model(const VictimModel& model, const std::string& path) {
  model.validate();
  std::string out;
  out.append(kModelMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
  for (const QuantizedLayer& l : model.layers) {
    put_u64(out, l.rows);
    put_u64(out, l.cols);
    put_f64(out, l.scale);
  }
  put_u64(out, model.seed);
  for (const QuantizedLayer& l : model.layers)
    out.append(reinterpret_cast<const char*>(l.codes.data()), l.codes.size());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("model: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

VictimModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("model: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("model: bad magic");
  VictimModel m;
  const std::uint32_t n = r.u32();
  m.layers.resize(n);
  for (QuantizedLayer& l : m.layers) {
    l.rows = r.u64();
    l.cols = r.u64();
    l.scale = r.f64();
  }
  m.seed = r.u64();
  for (QuantizedLayer& l : m.layers) {
    l.codes.resize(l.rows * l.cols);
    for (std::int8_t& c : l.codes) c = static_cast<std::int8_t>(r.u8());
  }
  if (r.pos != buf.size()) throw FormatError("model: trailing bytes");
  m.validate();
  return m;
}

void PackConfig::validate() const {
  if (chunk_rows == 0 || chunk_cols == 0)
    throw ParameterError("pack: chunk dims must be positive");
}

PackedLayer pack_layer(const QuantizedLayer& layer, const PackConfig& cfg) {
  cfg.validate();
  const std::size_t grid_rows = (layer.rows + cfg.chunk_rows - 1) / cfg.chunk_rows;
  const std::size_t grid_cols = (layer.cols + cfg.chunk_cols - 1) / cfg.chunk_cols;
  PackedLayer out;
  out.bytes.reserve(grid_rows * grid_cols * cfg.chunk_rows * cfg.chunk_cols);
  out.byte_to_weight.reserve(out.bytes.capacity());
  out.weight_to_byte.assign(layer.rows * layer.cols, 0);
  for (std::size_t ci = 0; ci < grid_rows; ++ci) {
    for (std::size_t cj = 0; cj < grid_cols; ++cj) {
      for (std::size_t c = 0; c < cfg.chunk_cols; ++c) {
        for (std::size_t r = 0; r < cfg.chunk_rows; ++r) {
          const std::size_t wr = ci * cfg.chunk_rows + r;
          const std::size_t wc = cj * cfg.chunk_cols + c;
          if (wr < layer.rows && wc < layer.cols) {
            const std::size_t flat = wr * layer.cols + wc;
            out.weight_to_byte[flat] = out.bytes.size();
            out.byte_to_weight.push_back(static_cast<std::int64_t>(flat));
            out.bytes.push_back(static_cast<std::uint8_t>(layer.code(wr, wc)));
          } else {
            out.byte_to_weight.push_back(-1);
            out.bytes.push_back(0);
          }
        }
      }
    }
  }
  return out;
}

PackedModel::PackedModel(const VictimModel& model, const PackConfig& cfg,
                         std::size_t page_size_bytes)
    : page_size_(page_size_bytes) {
  model.validate();
  cfg.validate();
  if (page_size_ == 0) throw ParameterError("pack: page size must be positive");
  std::uint64_t page = 0;
  for (const QuantizedLayer& l : model.layers) {
    packed_.push_back(pack_layer(l, cfg));
    layer_cols_.push_back(l.cols);
    layer_page_base_.push_back(page);
    const std::size_t pages = (packed_.back().bytes.size() + page_size_ - 1) / page_size_;
    layer_pages_.push_back(pages);
    page += pages;
  }
  page_count_ = page;
}

std::size_t PackedModel::layer_of_page(std::uint64_t page) const {
  if (page >= page_count_) throw ParameterError("pack: page index out of range");
  std::size_t layer = layer_page_base_.size() - 1;
  while (layer_page_base_[layer] > page) --layer;
  return layer;
}

std::vector<std::uint8_t> PackedModel::page_bytes(std::uint64_t page) const {
  const std::size_t layer = layer_of_page(page);
  const PackedLayer& pl = packed_[layer];
  const std::size_t begin = static_cast<std::size_t>(page - layer_page_base_[layer]) * page_size_;
  std::vector<std::uint8_t> out(page_size_, 0);
  const std::size_t n = std::min(page_size_, pl.bytes.size() - std::min(begin, pl.bytes.size()));
  std::copy(pl.bytes.begin() + begin, pl.bytes.begin() + begin + n, out.begin());
  return out;
}

std::pair<std::uint64_t, std::size_t> PackedModel::locate_byte(std::size_t layer, std::size_t row,
                                                               std::size_t col) const {
  if (layer >= packed_.size()) throw ParameterError("pack: layer out of range");
  const std::size_t cols = layer_cols_[layer];
  const PackedLayer& pl = packed_[layer];
  const std::size_t flat = row * cols + col;
  if (col >= cols || flat >= pl.weight_to_byte.size())
    throw ParameterError("pack: weight coordinate out of range");
  const std::size_t off = pl.weight_to_byte[flat];
  return {layer_page_base_[layer] + off / page_size_, off % page_size_};
}

BitLocation PackedModel::locate_bit(std::size_t layer, std::size_t row, std::size_t col,
                                    int bit_index) const {
  if (bit_index < 0 || bit_index > 7) throw ParameterError("pack: bit index out of range");
  auto [page, byte_off] = locate_byte(layer, row, col);
  return {page, byte_off * 8 + static_cast<std::size_t>(7 - bit_index)};
}

std::optional<WeightBitCoord> PackedModel::bit_at(std::uint64_t page,
                                                  std::size_t bit_offset) const {
  if (bit_offset >= page_size_ * 8) throw ParameterError("pack: bit offset out of range");
  const std::size_t layer = layer_of_page(page);
  const PackedLayer& pl = packed_[layer];
  const std::size_t byte_off =
      static_cast<std::size_t>(page - layer_page_base_[layer]) * page_size_ + bit_offset / 8;
  if (byte_off >= pl.byte_to_weight.size()) return std::nullopt;  // page slack
  const std::int64_t flat = pl.byte_to_weight[byte_off];
  if (flat < 0) return std::nullopt;  // chunk padding
  const std::size_t cols = layer_cols_[layer];
  return WeightBitCoord{layer, static_cast<std::size_t>(flat) / cols,
                        static_cast<std::size_t>(flat) % cols,
                        7 - static_cast<int>(bit_offset % 8)};
}

std::size_t InferenceTrace::total_accesses() const {
  std::size_t n = 0;
  for (const TraceEvent& e : events) n += e.accesses.size();
  return n;
}

VictimProcess::VictimProcess(const VictimModel& model, const PackConfig& cfg, MemSystem& ms)
    : model_(&model), packed_(model, cfg, ms.geometry().page_size_bytes), ms_(&ms) {}

void VictimProcess::place_initial() {
  std::vector<VictimPageTag> tags;
  tags.reserve(packed_.page_count());
  for (std::uint64_t p = 0; p < packed_.page_count(); ++p)
    tags.push_back({p, PageKind::Secret});
  std::vector<PhysPageId> placed = ms_->allocate_for_victim(tags);
  for (std::uint64_t p = 0; p < packed_.page_count(); ++p)
    ms_->write_page(placed[p], packed_.page_bytes(p));
  placed_ = true;
}

InferenceTrace VictimProcess::run_inference_trace(const TraceConfig& cfg) const {
  if (!placed_)
    throw PlacementError("run_inference_trace: victim model was never placed in memory");
  InferenceTrace trace;
  trace.events.push_back({AnchorKind::InferStart, 0, {}});
  std::uint64_t scratch = packed_.page_count();  // non-secret ids sit above the weight pages
  for (std::size_t l = 0; l < packed_.layer_count(); ++l) {
    trace.events.push_back({AnchorKind::LayerStart, l, {}});
    TraceEvent kernel{AnchorKind::KernelCreate, l, {}};
    for (std::size_t i = 0; i < cfg.non_secret_before; ++i)
      kernel.accesses.push_back({scratch++, PageKind::NonSecret});
    const std::uint64_t base = packed_.first_page_of_layer(l);
    for (std::size_t p = 0; p < packed_.pages_in_layer(l); ++p) {
      for (std::size_t i = 0; i < cfg.non_secret_between; ++i)
        kernel.accesses.push_back({scratch++, PageKind::NonSecret});
      kernel.accesses.push_back({base + p, PageKind::Secret});
    }
    trace.events.push_back(std::move(kernel));
  }
  return trace;
}

std::vector<PhysPageId> VictimProcess::touch(const TraceEvent& event) {
  if (!placed_) throw PlacementError("touch: victim model was never placed in memory");
  return ms_->allocate_for_victim(event.accesses);
}

}  // namespace rowsteal
