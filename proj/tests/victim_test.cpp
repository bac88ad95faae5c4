#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <map>
#include <set>

#include "rowsteal/errors.hpp"
#include "rowsteal/rng.hpp"
#include "rowsteal/victim.hpp"

using namespace rowsteal;

namespace {

QuantizedLayer make_layer(std::size_t rows, std::size_t cols, double scale = 0.5,
                          int base = 1) {
  QuantizedLayer l;
  l.rows = rows;
  l.cols = cols;
  l.scale = scale;
  l.codes.resize(rows * cols);
  for (std::size_t i = 0; i < l.codes.size(); ++i)
    l.codes[i] = static_cast<std::int8_t>((base + static_cast<int>(i) * 7) % 251 - 125);
  return l;
}

VictimModel two_layer_model() {
  VictimModel m;
  m.layers = {make_layer(3, 4, 0.25), make_layer(2, 3, 0.5, 11)};
  m.biases = {{0.1, 0.2, 0.3}, {0.4, 0.5}};
  m.seed = 77;
  return m;
}

// Independent packing arithmetic: chunks tile the matrix left-to-right then
// top-to-bottom; inside a chunk, bytes go column-by-column.
std::size_t oracle_byte_offset(std::size_t r, std::size_t c, std::size_t rows, std::size_t cols,
                               std::size_t cr, std::size_t cc) {
  const std::size_t chunk_cols_total = (cols + cc - 1) / cc;
  const std::size_t chunk_index = (r / cr) * chunk_cols_total + (c / cc);
  const std::size_t offset_in_chunk = (c % cc) * cr + (r % cr);
  (void)rows;
  return chunk_index * (cr * cc) + offset_in_chunk;
}

}  // namespace

TEST_CASE("model validation") {
  auto m = two_layer_model();
  CHECK_NOTHROW(m.validate());
  CHECK(m.total_weights() == 18);

  VictimModel empty;
  CHECK_THROWS_AS(empty.validate(), ParameterError);

  auto bad_chain = two_layer_model();
  bad_chain.layers[1].cols = 4;
  bad_chain.layers[1].codes.resize(8);
  CHECK_THROWS_AS(bad_chain.validate(), ParameterError);

  auto bad_scale = two_layer_model();
  bad_scale.layers[0].scale = 0.0;
  CHECK_THROWS_AS(bad_scale.validate(), ParameterError);

  auto bad_bias = two_layer_model();
  bad_bias.biases[0].pop_back();
  CHECK_THROWS_AS(bad_bias.validate(), ParameterError);

  auto no_bias = two_layer_model();
  no_bias.biases.clear();  // allowed: biases are a runtime-only sidecar
  CHECK_NOTHROW(no_bias.validate());
}

TEST_CASE("a four-by-two matrix in four-by-two chunks packs column zero then column one") {
  QuantizedLayer l;
  l.rows = 4;
  l.cols = 2;
  l.scale = 1.0;
  l.codes = {1, 2, 3, 4, 5, 6, 7, 8};  // row-major: w(r,c) = 2r + c + 1
  auto packed = pack_layer(l, PackConfig{4, 2});
  REQUIRE(packed.bytes.size() == 8);
  CHECK(packed.bytes == std::vector<std::uint8_t>{1, 3, 5, 7, 2, 4, 6, 8});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(packed.weight_to_byte[r * 2 + c] == c * 4 + r);
}

TEST_CASE("a one-by-one matrix packs to a single byte at offset zero") {
  QuantizedLayer l;
  l.rows = 1;
  l.cols = 1;
  l.scale = 1.0;
  l.codes = {42};
  for (auto cfg : {PackConfig{1, 1}, PackConfig{4, 2}, PackConfig{3, 3}}) {
    auto packed = pack_layer(l, cfg);
    CHECK(packed.weight_to_byte[0] == 0);
    CHECK(packed.bytes[0] == 42);
    CHECK(packed.bytes.size() == cfg.chunk_rows * cfg.chunk_cols);
  }
}

TEST_CASE("a five-by-three matrix in four-by-two chunks spans four padded chunks") {
  auto l = make_layer(5, 3);
  auto packed = pack_layer(l, PackConfig{4, 2});
  // ceil(5/4) x ceil(3/2) = 2 x 2 chunks of 8 bytes each.
  REQUIRE(packed.bytes.size() == 32);

  // Brute-force oracle over all 15 weights.
  std::set<std::size_t> used;
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t expect = oracle_byte_offset(r, c, 5, 3, 4, 2);
      const std::size_t got = packed.weight_to_byte[r * 3 + c];
      CHECK(got == expect);
      CHECK(packed.bytes[got] == static_cast<std::uint8_t>(l.code(r, c)));
      CHECK(packed.byte_to_weight[got] == static_cast<std::int64_t>(r * 3 + c));
      CHECK(used.insert(got).second);
    }
  }
  // Every remaining byte is zero-filled padding with no weight behind it.
  for (std::size_t b = 0; b < packed.bytes.size(); ++b) {
    if (used.count(b)) continue;
    CHECK(packed.bytes[b] == 0);
    CHECK(packed.byte_to_weight[b] == -1);
  }
}

TEST_CASE("pack round-trips for every shape up to 9x9 and chunking up to 4x4") {
  for (std::size_t rows = 1; rows <= 9; ++rows)
    for (std::size_t cols = 1; cols <= 9; ++cols)
      for (std::size_t cr = 1; cr <= 4; ++cr)
        for (std::size_t cc = 1; cc <= 4; ++cc) {
          auto l = make_layer(rows, cols, 1.0, static_cast<int>(rows * 31 + cols));
          auto packed = pack_layer(l, PackConfig{cr, cc});
          const std::size_t chunks = ((rows + cr - 1) / cr) * ((cols + cc - 1) / cc);
          REQUIRE(packed.bytes.size() == chunks * cr * cc);
          std::set<std::size_t> used;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t flat = r * cols + c;
              const std::size_t got = packed.weight_to_byte[flat];
              REQUIRE(got == oracle_byte_offset(r, c, rows, cols, cr, cc));
              // Unpack identity on real positions.
              REQUIRE(packed.bytes[got] == static_cast<std::uint8_t>(l.code(r, c)));
              REQUIRE(packed.byte_to_weight[got] == static_cast<std::int64_t>(flat));
              REQUIRE(used.insert(got).second);  // bijective
            }
          for (std::size_t b = 0; b < packed.bytes.size(); ++b)
            if (!used.count(b)) REQUIRE(packed.byte_to_weight[b] == -1);
        }
}

TEST_CASE("chunk dims must be positive") {
  CHECK_THROWS_AS((PackConfig{0, 2}).validate(), ParameterError);
  CHECK_THROWS_AS((PackConfig{2, 0}).validate(), ParameterError);
}

TEST_CASE("packed model places each layer on fresh pages") {
  auto m = two_layer_model();
  // Page of 8 bytes; layer 0 (3x4) packs to 2 chunks of 8 = 16 bytes = 2
  // pages; layer 1 (2x3) packs to 2 chunks = 16 bytes = 2 pages.
  PackedModel pm(m, PackConfig{4, 2}, 8);
  CHECK(pm.page_count() == 4);
  CHECK(pm.pages_in_layer(0) == 2);
  CHECK(pm.pages_in_layer(1) == 2);
  CHECK(pm.first_page_of_layer(0) == 0);
  CHECK(pm.first_page_of_layer(1) == 2);
  CHECK(pm.layer_of_page(0) == 0);
  CHECK(pm.layer_of_page(1) == 0);
  CHECK(pm.layer_of_page(2) == 1);
  CHECK(pm.layer_of_page(3) == 1);

  // Page bytes hold the packed buffer slices, zero-padded to the page size.
  auto packed0 = pack_layer(m.layers[0], PackConfig{4, 2});
  auto page0 = pm.page_bytes(0);
  REQUIRE(page0.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(page0[i] == packed0.bytes[i]);
}

TEST_CASE("the first weight byte's top bit sits at page zero bit zero") {
  auto m = two_layer_model();
  PackedModel pm(m, PackConfig{4, 2}, 8);
  auto loc = pm.locate_bit(0, 0, 0, 7);
  CHECK(loc.page == 0);
  CHECK(loc.bit_offset == 0);
  // Bit index 0 (LSB) sits at the byte's last bit slot.
  CHECK(pm.locate_bit(0, 0, 0, 0).bit_offset == 7);
}

TEST_CASE("byte offsets one page in land on the next page") {
  // One layer of 16x1 with 8x1 chunks = 16 packed bytes; page size 8.
  VictimModel m;
  m.layers = {make_layer(16, 1)};
  PackedModel pm(m, PackConfig{8, 1}, 8);
  CHECK(pm.page_count() == 2);
  // Weight (8,0) is packed byte 8, the first byte of page 1.
  auto [page, byte] = pm.locate_byte(0, 8, 0);
  CHECK(page == 1);
  CHECK(byte == 0);
  for (int bit = 7; bit >= 0; --bit) {
    auto loc = pm.locate_bit(0, 8, 0, bit);
    CHECK(loc.page == 1);
    CHECK(loc.bit_offset == static_cast<std::size_t>(7 - bit));
  }
}

TEST_CASE("bit addresses round-trip through the inverse map") {
  auto m = two_layer_model();
  PackedModel pm(m, PackConfig{4, 2}, 8);
  auto rng = make_rng(5);
  std::uniform_int_distribution<std::size_t> pick_layer(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t layer = pick_layer(rng);
    std::uniform_int_distribution<std::size_t> pr(0, m.layers[layer].rows - 1);
    std::uniform_int_distribution<std::size_t> pc(0, m.layers[layer].cols - 1);
    std::uniform_int_distribution<int> pb(0, 7);
    const std::size_t r = pr(rng), c = pc(rng);
    const int bit = pb(rng);
    auto loc = pm.locate_bit(layer, r, c, bit);
    auto back = pm.bit_at(loc.page, loc.bit_offset);
    REQUIRE(back.has_value());
    CHECK(back->layer == layer);
    CHECK(back->row == r);
    CHECK(back->col == c);
    CHECK(back->bit_index == bit);
  }
}

TEST_CASE("every weight bit owns a distinct physical bit address") {
  auto m = two_layer_model();
  PackedModel pm(m, PackConfig{4, 2}, 8);
  std::set<std::pair<std::uint64_t, std::size_t>> seen;
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    for (std::size_t r = 0; r < m.layers[l].rows; ++r)
      for (std::size_t c = 0; c < m.layers[l].cols; ++c)
        for (int bit = 0; bit < 8; ++bit) {
          auto loc = pm.locate_bit(l, r, c, bit);
          CHECK(seen.insert({loc.page, loc.bit_offset}).second);
        }
  CHECK(seen.size() == m.total_weights() * 8);
}

TEST_CASE("padding and page slack have no weight behind them") {
  VictimModel m;
  m.layers = {make_layer(5, 3)};
  PackedModel pm(m, PackConfig{4, 2}, 64);  // 32 packed bytes, one 64-byte page
  CHECK(pm.page_count() == 1);
  std::size_t real = 0, dead = 0;
  for (std::size_t off = 0; off < 64 * 8; ++off) {
    if (pm.bit_at(0, off).has_value())
      ++real;
    else
      ++dead;
  }
  CHECK(real == 15 * 8);
  CHECK(dead == 64 * 8 - 15 * 8);
  CHECK_THROWS_AS(pm.bit_at(1, 0), ParameterError);
  CHECK_THROWS_AS(pm.bit_at(0, 64 * 8), ParameterError);
  CHECK_THROWS_AS(pm.locate_bit(0, 0, 0, 8), ParameterError);
  CHECK_THROWS_AS(pm.locate_bit(0, 5, 0, 0), ParameterError);
  CHECK_THROWS_AS(pm.locate_bit(1, 0, 0, 0), ParameterError);
}

TEST_CASE("model files round-trip codes, dims, scales, and seed") {
  auto m = two_layer_model();
  const std::string path = "victim_test_model.bin";
  save_model(m, path);
  auto back = load_model(path);
  std::remove(path.c_str());

  REQUIRE(back.layers.size() == m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    CHECK(back.layers[l].rows == m.layers[l].rows);
    CHECK(back.layers[l].cols == m.layers[l].cols);
    CHECK(back.layers[l].codes == m.layers[l].codes);
    CHECK(back.layers[l].scale == m.layers[l].scale);
  }
  CHECK(back.seed == m.seed);
  CHECK(back.biases.empty());  // biases never enter the model file

  CHECK_THROWS_AS(load_model("no_such_model.bin"), FormatError);
}

TEST_CASE("corrupted model files are rejected") {
  auto m = two_layer_model();
  const std::string path = "victim_test_corrupt.bin";
  save_model(m, path);
  {
    FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f);
    std::fputc('X', f);  // clobber the magic
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("an inference trace walks layers in order with anchored kernel events") {
  // Two layers, one weight page each: 4x2 packs to 8 bytes, 2x4 to 16; both
  // fit one 16-byte page.
  VictimModel m;
  m.layers = {make_layer(4, 2), make_layer(2, 4, 0.5, 3)};
  MemSystem ms(DramGeometry{8, 2, 16});
  VictimProcess vp(m, PackConfig{4, 2}, ms);
  CHECK(!vp.placed());
  CHECK_THROWS_AS(vp.run_inference_trace({}), PlacementError);
  vp.place_initial();
  CHECK(vp.placed());

  auto trace = vp.run_inference_trace(TraceConfig{0, 0});
  REQUIRE(trace.events.size() == 5);
  CHECK(trace.events[0].anchor == AnchorKind::InferStart);
  CHECK(trace.events[1].anchor == AnchorKind::LayerStart);
  CHECK(trace.events[1].layer == 0);
  CHECK(trace.events[2].anchor == AnchorKind::KernelCreate);
  CHECK(trace.events[2].layer == 0);
  REQUIRE(trace.events[2].accesses.size() == 1);
  CHECK(trace.events[2].accesses[0].logical_index == 0);
  CHECK(trace.events[2].accesses[0].kind == PageKind::Secret);
  CHECK(trace.events[3].anchor == AnchorKind::LayerStart);
  CHECK(trace.events[3].layer == 1);
  CHECK(trace.events[4].accesses[0].logical_index == 1);
  CHECK(trace.total_accesses() == 2);

  // Interleaving: one non-secret access before each weight page, two extra at
  // the head of each layer.
  auto fat = vp.run_inference_trace(TraceConfig{2, 1});
  const auto& k0 = fat.events[2];
  REQUIRE(k0.accesses.size() == 4);
  CHECK(k0.accesses[0].kind == PageKind::NonSecret);
  CHECK(k0.accesses[1].kind == PageKind::NonSecret);
  CHECK(k0.accesses[2].kind == PageKind::NonSecret);
  CHECK(k0.accesses[3].kind == PageKind::Secret);
  // Non-secret logical ids live above the weight pages and never collide.
  std::set<std::uint64_t> ids;
  for (const auto& ev : fat.events)
    for (const auto& a : ev.accesses) {
      CHECK(ids.insert(a.logical_index).second);
      if (a.kind == PageKind::NonSecret) CHECK(a.logical_index >= vp.packed().page_count());
    }

  // Identical configs yield identical traces.
  auto fat2 = vp.run_inference_trace(TraceConfig{2, 1});
  REQUIRE(fat.events.size() == fat2.events.size());
  for (std::size_t i = 0; i < fat.events.size(); ++i) {
    CHECK(fat.events[i].anchor == fat2.events[i].anchor);
    CHECK(fat.events[i].layer == fat2.events[i].layer);
    REQUIRE(fat.events[i].accesses.size() == fat2.events[i].accesses.size());
    for (std::size_t j = 0; j < fat.events[i].accesses.size(); ++j) {
      CHECK(fat.events[i].accesses[j].logical_index == fat2.events[i].accesses[j].logical_index);
      CHECK(fat.events[i].accesses[j].kind == fat2.events[i].accesses[j].kind);
    }
  }
}

TEST_CASE("initial placement writes the packed pages into memory") {
  VictimModel m;
  m.layers = {make_layer(4, 2), make_layer(2, 4, 0.5, 3)};
  MemSystem ms(DramGeometry{8, 2, 8});
  VictimProcess vp(m, PackConfig{4, 2}, ms);
  vp.place_initial();
  for (std::uint64_t p = 0; p < vp.packed().page_count(); ++p) {
    auto frame = ms.victim_frame(p);
    REQUIRE(frame.has_value());
    CHECK(ms.read_page(*frame) == vp.packed().page_bytes(p));
    CHECK(ms.owner(*frame) == OwnerKind::Victim);
  }
}

TEST_CASE("touching a trace event faults its pages back in") {
  VictimModel m;
  m.layers = {make_layer(4, 2)};
  MemSystem ms(DramGeometry{8, 2, 8});
  VictimProcess vp(m, PackConfig{4, 2}, ms);
  vp.place_initial();
  auto trace = vp.run_inference_trace(TraceConfig{0, 0});

  ms.exhaust_memory();
  auto held = ms.exhaust_memory();
  ms.release_pages(std::span<const PhysPageId>(held.data(), 1));
  auto placed = vp.touch(trace.events[1]);  // LayerStart: no accesses
  CHECK(placed.empty());
  placed = vp.touch(trace.events[2]);  // KernelCreate: one weight page
  REQUIRE(placed.size() == 1);
  CHECK(placed[0] == held[0]);
  CHECK(ms.read_page(placed[0]) == vp.packed().page_bytes(0));
}
