#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rowsteal/memsys.hpp"

namespace rowsteal {

/// One dense layer's weights as signed 8-bit codes plus a dequantization
/// scale: w = code * scale.  Codes are stored row-major (rows = outputs,
/// cols = inputs).
struct QuantizedLayer {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> codes;  // rows * cols, row-major
  double scale = 1.0;

  std::int8_t code(std::size_t r, std::size_t c) const { return codes[r * cols + c]; }
  std::size_t weight_count() const { return rows * cols; }
};

/// The victim network's secret parameters.  Biases ride along for evaluation
/// but are never packed, placed, or leaked.
struct VictimModel {
  std::vector<QuantizedLayer> layers;
  std::vector<std::vector<double>> biases;  // may be empty when loaded from disk
  std::uint64_t seed = 0;

  std::size_t total_weights() const;
  void validate() const;
};

/// Binary model file: header (layer count, per-layer dims and scale, seed),
/// then each layer's raw code bytes.  All integers and doubles little-endian.
void save_model(const VictimModel& model, const std::string& path);
VictimModel load_model(const std::string& path);

/// Inference-library packing parameters.  The weight matrix is tiled into
/// chunk_rows x chunk_cols chunks emitted left-to-right, top-to-bottom; bytes
/// within a chunk are column-major; ragged edges are zero-padded to the full
/// chunk extent.
struct PackConfig {
  std::size_t chunk_rows = 512;
  std::size_t chunk_cols = 8;

  void validate() const;
};

struct PackedLayer {
  std::vector<std::uint8_t> bytes;          // packed buffer, layer-local offsets
  std::vector<std::int64_t> byte_to_weight; // flat weight index, or -1 for padding
  std::vector<std::size_t> weight_to_byte;  // rows*cols entries
};

PackedLayer pack_layer(const QuantizedLayer& layer, const PackConfig& cfg);

struct BitLocation {
  std::uint64_t page = 0;       // model-global logical page index
  std::size_t bit_offset = 0;   // within the page; 0 is the MSB of byte 0
};

struct WeightBitCoord {
  std::size_t layer = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  int bit_index = 0;  // 7 = MSB of the signed code
};

/// Packed model plus the weight <-> page/bit address maps.  Each layer's
/// packed buffer starts on a fresh page; logical page indices run across
/// layers in layer order.
class PackedModel {
 public:
  PackedModel(const VictimModel& model, const PackConfig& cfg, std::size_t page_size_bytes);

  std::size_t page_count() const { return page_count_; }
  std::size_t layer_count() const { return layer_pages_.size(); }
  std::size_t pages_in_layer(std::size_t layer) const { return layer_pages_[layer]; }
  std::uint64_t first_page_of_layer(std::size_t layer) const { return layer_page_base_[layer]; }
  std::size_t layer_of_page(std::uint64_t page) const;
  std::size_t page_size_bytes() const { return page_size_; }

  /// Page content (packed bytes zero-padded to a full page).
  std::vector<std::uint8_t> page_bytes(std::uint64_t page) const;

  /// Forward map: weight byte -> (page, byte offset within page).
  std::pair<std::uint64_t, std::size_t> locate_byte(std::size_t layer, std::size_t row,
                                                    std::size_t col) const;
  /// Forward map at bit granularity; bit_index 7 is the code's MSB and lands
  /// at the byte's first bit slot.
  BitLocation locate_bit(std::size_t layer, std::size_t row, std::size_t col,
                         int bit_index) const;
  /// Inverse map; nullopt for padding and page slack.
  std::optional<WeightBitCoord> bit_at(std::uint64_t page, std::size_t bit_offset) const;

 private:
  std::size_t page_size_ = 0;
  std::size_t page_count_ = 0;
  std::vector<PackedLayer> packed_;
  std::vector<std::size_t> layer_cols_;       // for flat index -> (row, col)
  std::vector<std::uint64_t> layer_page_base_;
  std::vector<std::size_t> layer_pages_;
};

enum class AnchorKind : std::uint8_t { InferStart, LayerStart, KernelCreate };

struct TraceEvent {
  AnchorKind anchor = AnchorKind::InferStart;
  std::size_t layer = 0;  // meaningful for LayerStart / KernelCreate
  std::vector<VictimPageTag> accesses;
};

struct InferenceTrace {
  std::vector<TraceEvent> events;

  std::size_t total_accesses() const;
};

struct TraceConfig {
  std::size_t non_secret_before = 0;   // non-secret accesses at the head of each layer
  std::size_t non_secret_between = 0;  // non-secret accesses before each weight page
};

/// The victim process: owns the packed model's residency in a MemSystem.
/// Weight page p carries logical index p (Secret); non-secret scratch pages
/// reuse a fixed index range above the weight pages on every inference.
class VictimProcess {
 public:
  VictimProcess(const VictimModel& model, const PackConfig& cfg, MemSystem& ms);

  const PackedModel& packed() const { return packed_; }
  const VictimModel& model() const { return *model_; }
  bool placed() const { return placed_; }

  /// Initial residency: allocates a frame per weight page and writes content.
  void place_initial();

  /// Deterministic one-inference page-access trace: InferStart, then per layer
  /// LayerStart(l) and KernelCreate(l); the layer's weight pages follow the
  /// kernel-create anchor in ascending order, interleaved with non-secret
  /// accesses per the config.  Throws PlacementError if the model was never
  /// placed.
  InferenceTrace run_inference_trace(const TraceConfig& cfg) const;

  /// Victim-side replay of one event's page faults.
  std::vector<PhysPageId> touch(const TraceEvent& event);

 private:
  const VictimModel* model_;
  PackedModel packed_;
  MemSystem* ms_;
  bool placed_ = false;
};

}  // namespace rowsteal
