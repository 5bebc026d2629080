// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "attnmosaic/error.hpp"
#include "attnmosaic/mosaic.hpp"
#include "test_support.hpp"

using namespace attnmosaic;
using namespace attnmosaic::mosaic;
using attnmosaic::testing::TempDir;

namespace {

template <typename Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an attnmosaic::Error");
  return ErrorCode::kUsage;
}

std::vector<TileRecord> pattern_tiles(int count, int s, std::uint64_t seed) {
  std::vector<TileRecord> tiles;
  for (int i = 0; i < count; ++i) {
    tiles.push_back(make_tile(static_cast<std::size_t>(i), "tile_" + std::to_string(i) + ".png",
                              testing::pattern_image(3 * s, 2 * s, seed * 100 + static_cast<std::uint64_t>(i)), s));
  }
  return tiles;
}

}  // namespace

// ---------------------------------------------------------------------------
// ingest_tiles

TEST_CASE("ingest: uniform gray tile keeps its value") {
  TempDir dir;
  save_image(testing::uniform_image(64, 64, 1, 128), dir / "gray.png");
  const TileLibrary lib = ingest_tiles(dir.path(), 8);
  REQUIRE(lib.tiles.size() == 1);
  const TileRecord& t = lib.tiles[0];
  CHECK(t.id == 0);
  CHECK(t.channels == 1);
  CHECK(t.width == 64);
  CHECK(t.height == 64);
  CHECK(t.thumb.pixels.size() == 8u * 8u * 1u);
  for (auto v : t.thumb.pixels) CHECK(v == 128);
  for (double s : t.stats) CHECK(s == 128.0);
}

TEST_CASE("ingest: corrupted files are skipped and reported") {
  TempDir dir;
  save_image(testing::pattern_image(20, 30, 1), dir / "a.png");
  testing::write_bytes(dir / "b.jpg", "\xff\xd8 truncated jpeg");
  save_image(testing::pattern_image(40, 10, 2), dir / "c.png");
  const TileLibrary lib = ingest_tiles(dir.path(), 4);
  REQUIRE(lib.tiles.size() == 2);
  CHECK(lib.tiles[0].source_path.filename() == "a.png");
  CHECK(lib.tiles[1].source_path.filename() == "c.png");
  CHECK(lib.tiles[1].id == 1);
  REQUIRE(lib.skipped.size() == 1);
  CHECK(lib.skipped[0].path.filename() == "b.jpg");
}

TEST_CASE("ingest: 224-image library gives dense ids") {
  TempDir dir;
  testing::write_tile_corpus(dir.path(), 224, 40, 5);
  const TileLibrary lib = ingest_tiles(dir.path(), 32);
  REQUIRE(lib.tiles.size() == 224);
  for (std::size_t i = 0; i < lib.tiles.size(); ++i) {
    CHECK(lib.tiles[i].id == i);
    CHECK(lib.tiles[i].thumb.width == 32);
    for (double s : lib.tiles[i].stats) CHECK(std::isfinite(s));
  }
}

TEST_CASE("ingest: JPEG input decodes") {
  TempDir dir;
  save_image(testing::uniform_image(16, 16, 3, 90), dir / "x.jpg");
  const TileLibrary lib = ingest_tiles(dir.path(), 4);
  REQUIRE(lib.tiles.size() == 1);
  CHECK(lib.tiles[0].channels == 3);
  for (double s : lib.tiles[0].stats) CHECK(s == doctest::Approx(90.0).epsilon(0.02));
}

TEST_CASE("ingest: empty or undecodable directories are errors") {
  TempDir empty;
  CHECK(error_code_of([&] { ingest_tiles(empty.path(), 8); }) == ErrorCode::kNoTiles);

  TempDir junk;
  testing::write_bytes(junk / "x.png", "nope");
  CHECK(error_code_of([&] { ingest_tiles(junk.path(), 8); }) == ErrorCode::kNoTiles);

  CHECK(error_code_of([&] { ingest_tiles(junk.path(), 0); }) == ErrorCode::kUsage);
}

// ---------------------------------------------------------------------------
// plan_grid

TEST_CASE("plan_grid: exact division") {
  const MosaicGrid g = plan_grid(640, 480, 32);
  CHECK(g.rows == 15);
  CHECK(g.cols == 20);
  CHECK(g.crop_x == 0);
  CHECK(g.crop_y == 0);
}

TEST_CASE("plan_grid: leftovers are center-cropped toward the top-left") {
  const MosaicGrid g = plan_grid(650, 485, 32);
  CHECK(g.rows == 15);
  CHECK(g.cols == 20);
  CHECK(g.crop_x == 5);
  CHECK(g.crop_y == 2);
}

TEST_CASE("plan_grid: boundary m*s == H is accepted") {
  const MosaicGrid g = plan_grid(300, 300, 100, 3, 3);
  CHECK(g.rows == 3);
  CHECK(g.cols == 3);
}

TEST_CASE("plan_grid: violations and too-small targets") {
  CHECK(error_code_of([] { plan_grid(300, 300, 100, 4, 3); }) == ErrorCode::kConstraint);
  CHECK(error_code_of([] { plan_grid(300, 300, 100, 3, 4); }) == ErrorCode::kConstraint);
  CHECK(error_code_of([] { plan_grid(300, 99, 100); }) == ErrorCode::kGridTooSmall);
  CHECK(error_code_of([] { plan_grid(99, 300, 100); }) == ErrorCode::kGridTooSmall);
  try {
    plan_grid(300, 300, 100, 4, 3);
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("m*s") != std::string::npos);
    CHECK(msg.find("H = 300") != std::string::npos);
  }
}

TEST_CASE("plan_grid: auto grids always satisfy the size constraints") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const int s = 1 + static_cast<int>(rng.uniform() * 40);
    const int w = s + static_cast<int>(rng.uniform() * 500);
    const int h = s + static_cast<int>(rng.uniform() * 500);
    const MosaicGrid g = plan_grid(w, h, s);
    CHECK(g.rows * s <= h);
    CHECK(g.cols * s <= w);
    CHECK((g.rows + 1) * s > h);
    CHECK(g.crop_x + g.cols * s <= w);
    CHECK(g.crop_y + g.rows * s <= h);
    CHECK(g.crop_x == (w - g.cols * s) / 2);
  }
}

// ---------------------------------------------------------------------------
// attention_score

TEST_CASE("attention_score: identical blocks score 1/eps") {
  const auto tiles = pattern_tiles(1, 8, 3);
  const double score = attention_score(tiles[0].thumb, tiles[0]);
  CHECK(score == doctest::Approx(1e6).epsilon(1e-12));
}

TEST_CASE("attention_score: uniform 100 vs uniform 110") {
  const TileRecord tile = make_tile(0, "t.png", testing::uniform_image(8, 8, 3, 110), 8);
  const Image cell = testing::uniform_image(8, 8, 3, 100);
  const StatVector cell_stats = block_stats(cell);
  for (std::size_t i = 0; i < kStatCount; ++i) CHECK(tile.stats[i] - cell_stats[i] == 10.0);
  // d = 10 * sqrt(15) = 38.72983346207417
  CHECK(stat_distance(cell_stats, tile.stats) == doctest::Approx(38.72983346207417).epsilon(1e-14));
  CHECK(attention_score(cell, tile) == doctest::Approx(0.025819888308049464).epsilon(1e-12));
}

TEST_CASE("attention_score: exact match beats every other tile") {
  const auto tiles = pattern_tiles(12, 8, 4);
  for (const auto& target : tiles) {
    const double own = attention_score(target.thumb, target);
    for (const auto& other : tiles) {
      if (other.id != target.id) CHECK(attention_score(target.thumb, other) < own);
    }
  }
}

TEST_CASE("attention_score is strictly decreasing in distance") {
  Rng rng(99);
  StatVector base{};
  for (auto& v : base) v = rng.uniform(0, 255);
  double previous = attention_score(base, base);
  for (int step = 1; step < 200; ++step) {
    StatVector moved = base;
    moved[static_cast<std::size_t>(step) % kStatCount] += 0.5 * step;
    for (std::size_t i = 0; i < kStatCount; ++i) moved[i] = base[i] + 0.25 * step;
    const double score = attention_score(base, moved);
    CHECK(score < previous);
    CHECK(score > 0.0);
    previous = score;
  }
}

TEST_CASE("block_stats: odd sizes share the middle row and column") {
  Image img(3, 3, 3, 0);
  img.at(1, 1, 0) = 90;  // center pixel, red channel
  const StatVector s = block_stats(img);
  CHECK(s[0] == doctest::Approx(10.0));
  // every quadrant is 2x2 and contains the center
  for (int q = 0; q < 4; ++q) CHECK(s[3 + 3 * q] == doctest::Approx(22.5));
  Image one(1, 1, 3, 0);
  one.at(0, 0, 2) = 7;
  const StatVector t = block_stats(one);
  for (int q = 0; q < 5; ++q) CHECK(t[static_cast<std::size_t>(3 * q + 2)] == 7.0);
}

TEST_CASE("grayscale tiles are scored as replicated RGB") {
  const TileRecord gray = make_tile(0, "g.png", testing::uniform_image(10, 10, 1, 60), 5);
  const TileRecord rgb = make_tile(1, "c.png", testing::uniform_image(10, 10, 3, 60), 5);
  CHECK(gray.thumb.channels == 1);
  CHECK(gray.stats == rgb.stats);
}

// ---------------------------------------------------------------------------
// compose

TEST_CASE("compose recovers a target pasted from known thumbs") {
  const auto tiles = pattern_tiles(10, 8, 21);
  const std::vector<std::size_t> truth{3, 7, 1, 9};
  const Image target = testing::assemble_target(tiles, truth, 2, 2, 8);
  const MosaicGrid grid = compose(target, tiles, plan_grid(target.width, target.height, 8));
  REQUIRE(grid.cells.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(grid.cells[i].tile_id == truth[i]);
    CHECK(grid.cells[i].row == static_cast<int>(i / 2));
    CHECK(grid.cells[i].col == static_cast<int>(i % 2));
  }
}

TEST_CASE("compose with a single tile assigns it everywhere") {
  const auto tiles = pattern_tiles(1, 4, 2);
  const Image target = testing::pattern_image(40, 28, 77);
  const MosaicGrid grid = compose(target, tiles, plan_grid(40, 28, 4));
  CHECK(grid.cells.size() == 70);
  for (const auto& c : grid.cells) {
    CHECK(c.tile_id == 0);
    CHECK(std::isfinite(c.score));
    CHECK(c.score > 0.0);
  }
}

TEST_CASE("compose breaks ties toward the lowest id") {
  const Image same = testing::pattern_image(16, 16, 5);
  std::vector<TileRecord> tiles{make_tile(0, "a.png", testing::pattern_image(16, 16, 6), 8),
                                make_tile(1, "b.png", same, 8), make_tile(2, "c.png", same, 8)};
  const Image target = testing::pattern_image(32, 32, 9);
  const MosaicGrid grid = compose(target, std::span<const TileRecord>(tiles).subspan(1),
                                  plan_grid(32, 32, 8));
  for (const auto& c : grid.cells) CHECK(c.tile_id == 1);
}

TEST_CASE("compose is independent of the thread count") {
  const auto tiles = pattern_tiles(25, 6, 8);
  const Image target = testing::pattern_image(125, 97, 31);
  const MosaicGrid skeleton = plan_grid(125, 97, 6);
  const MosaicGrid serial = compose(target, tiles, skeleton, 1);
  CHECK(compose(target, tiles, skeleton, 3) == serial);
  CHECK(compose(target, tiles, skeleton, 16) == serial);
}

TEST_CASE("compose honours the crop origin") {
  const auto tiles = pattern_tiles(6, 4, 12);
  const std::vector<std::size_t> truth{5, 0, 2, 4, 1, 3};
  const Image core = testing::assemble_target(tiles, truth, 2, 3, 4);
  Image padded(core.width + 3, core.height + 2, 3, 255);
  paste(padded, core, 1, 1);  // leftovers 3 and 2 split as 1/2 and 1/1
  const MosaicGrid skeleton = plan_grid(padded.width, padded.height, 4);
  REQUIRE(skeleton.crop_x == 1);
  REQUIRE(skeleton.crop_y == 1);
  const MosaicGrid grid = compose(padded, tiles, skeleton);
  for (std::size_t i = 0; i < truth.size(); ++i) CHECK(grid.cells[i].tile_id == truth[i]);
}

TEST_CASE("scaling pixels down keeps distance-zero matches") {
  const auto original = pattern_tiles(16, 6, 44);
  std::vector<TileRecord> scaled;
  for (const auto& t : original) {
    Image thumb = t.thumb;
    for (auto& v : thumb.pixels) v = static_cast<std::uint8_t>(std::lround(v * 0.6));
    scaled.push_back(make_tile(t.id, t.source_path, thumb, 6));
  }
  std::set<StatVector> distinct;
  for (const auto& t : scaled) distinct.insert(t.stats);
  REQUIRE(distinct.size() == scaled.size());  // no rounding ties

  Rng rng(3);
  std::vector<std::size_t> truth(12);
  for (auto& id : truth) id = static_cast<std::size_t>(rng.uniform() * 16);
  const Image target = testing::assemble_target(scaled, truth, 3, 4, 6);
  const MosaicGrid grid = compose(target, scaled, plan_grid(target.width, target.height, 6));
  for (std::size_t i = 0; i < truth.size(); ++i) CHECK(grid.cells[i].tile_id == truth[i]);
}

TEST_CASE("compose rejects an empty library and a mismatched target") {
  const Image target = testing::pattern_image(16, 16, 1);
  CHECK(error_code_of([&] { compose(target, {}, plan_grid(16, 16, 8)); }) == ErrorCode::kNoTiles);
  const auto tiles = pattern_tiles(2, 8, 1);
  CHECK(error_code_of([&] { compose(target, tiles, plan_grid(24, 16, 8)); }) ==
        ErrorCode::kConstraint);
}

// ---------------------------------------------------------------------------
// render_and_emit / metadata

namespace {

struct Fixture {
  TempDir dir;
  std::vector<TileRecord> tiles;
  MosaicGrid grid;

  Fixture() {
    testing::write_tile_corpus(dir / "tiles", 4, 24, 17);
    tiles = ingest_tiles(dir / "tiles", 8).tiles;
    const Image target = testing::assemble_target(tiles, {2, 0, 3, 3}, 2, 2, 8);
    grid = compose(target, tiles, plan_grid(16, 16, 8));
  }
};

}  // namespace

TEST_CASE("emit writes mosaic, metadata and referenced originals") {
  Fixture fx;
  const Bundle bundle = render_and_emit(fx.grid, fx.tiles, {}, fx.dir / "out");
  const Image mosaic = load_image(bundle.mosaic_path);
  CHECK(mosaic.width == 16);
  CHECK(mosaic.height == 16);
  CHECK(crop(mosaic, 0, 0, 8, 8) == to_rgb(fx.tiles[2].thumb));
  CHECK(crop(mosaic, 8, 8, 8, 8) == to_rgb(fx.tiles[3].thumb));

  const BundleMetadata meta = parse_metadata(testing::read_bytes(bundle.metadata_path));
  CHECK(meta.grid.cells.size() == 4);
  CHECK(meta.tiles.size() == 3);  // tiles 0, 2, 3
  CHECK(meta.tiles.size() <= 4);
  for (const auto& t : meta.tiles) {
    const auto copied = fx.dir / "out" / t.original;
    REQUIRE(std::filesystem::exists(copied));
    CHECK(testing::read_bytes(copied) == testing::read_bytes(fx.tiles[t.id].source_path));
  }
  CHECK(meta == bundle.metadata);
}

TEST_CASE("emit carries knowledge text verbatim") {
  Fixture fx;
  const Bundle bundle =
      render_and_emit(fx.grid, fx.tiles, {{0, "EcoTire retailer list"}}, fx.dir / "out");
  const BundleMetadata meta = parse_metadata(testing::read_bytes(bundle.metadata_path));
  CHECK(meta.tiles[0].id == 0);
  CHECK(meta.tiles[0].knowledge == "EcoTire retailer list");
  CHECK(meta.tiles[1].knowledge.empty());
}

TEST_CASE("emit is byte-deterministic") {
  Fixture fx;
  render_and_emit(fx.grid, fx.tiles, {{2, "x"}}, fx.dir / "a");
  render_and_emit(fx.grid, fx.tiles, {{2, "x"}}, fx.dir / "b");
  CHECK(testing::read_bytes(fx.dir / "a" / "metadata.json") ==
        testing::read_bytes(fx.dir / "b" / "metadata.json"));
  CHECK(testing::read_bytes(fx.dir / "a" / "mosaic.png") ==
        testing::read_bytes(fx.dir / "b" / "mosaic.png"));
}

TEST_CASE("emit failures are I/O errors") {
  Fixture fx;
  testing::write_bytes(fx.dir / "blocker", "file, not a directory");
  CHECK(error_code_of([&] { render_and_emit(fx.grid, fx.tiles, {}, fx.dir / "blocker" / "out"); }) ==
        ErrorCode::kIo);

  std::filesystem::remove(fx.tiles[3].source_path);
  try {
    render_and_emit(fx.grid, fx.tiles, {}, fx.dir / "out2");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    CHECK(std::string(e.what()).find("tile 3") != std::string::npos);
  }
}

TEST_CASE("metadata serialization round-trips exactly") {
  Rng rng(5);
  BundleMetadata meta;
  meta.grid = plan_grid(97, 61, 7);
  for (int i = 0; i < meta.grid.rows; ++i) {
    for (int j = 0; j < meta.grid.cols; ++j) {
      // awkward doubles exercise shortest-round-trip printing
      meta.grid.cells.push_back({i, j, static_cast<std::size_t>(i % 3), 1.0 / (rng.uniform() + 1e-6)});
    }
  }
  for (std::size_t id = 0; id < 3; ++id) {
    meta.tiles.push_back({id, "originals/t" + std::to_string(id) + ".png", 10, 20, 3,
                          id == 1 ? "quote \" and unicode \xc3\xa9" : ""});
  }
  const std::string text = serialize_metadata(meta);
  CHECK(parse_metadata(text) == meta);
  CHECK(serialize_metadata(parse_metadata(text)) == text);
}

TEST_CASE("metadata schema violations name the offending key") {
  Fixture fx;
  const BundleMetadata meta = build_metadata(fx.grid, fx.tiles, {});
  auto expect_key = [](const std::string& text, const std::string& key) {
    try {
      parse_metadata(text);
      FAIL("expected a validation error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kValidation);
      CHECK(std::string(e.what()).find(key) != std::string::npos);
    }
  };
  BundleMetadata short_cells = meta;
  short_cells.grid.cells.pop_back();
  expect_key(serialize_metadata(short_cells), "cells");

  BundleMetadata v2 = meta;
  v2.version = 2;
  expect_key(serialize_metadata(v2), "version");

  std::string missing = serialize_metadata(meta);
  missing.replace(missing.find("\"tile_size\""), 11, "\"tile_edge\"");
  expect_key(missing, "grid.tile_size");

  BundleMetadata dangling = meta;
  dangling.tiles.erase(dangling.tiles.begin());
  expect_key(serialize_metadata(dangling), "tile_id");
}

// ---------------------------------------------------------------------------
// knowledge

TEST_CASE("knowledge pack lists every tile") {
  const auto tiles = pattern_tiles(2, 4, 1);
  const std::string pack = knowledge_pack(tiles, {{0, "alpha"}, {1, "beta"}});
  CHECK(pack.find("\"alpha\"") != std::string::npos);
  CHECK(pack.find("\"beta\"") != std::string::npos);
  CHECK(pack.find("tile_1.png") != std::string::npos);

  const std::string empty = knowledge_pack(tiles, {});
  CHECK(empty.find("\"knowledge\": \"\"") != std::string::npos);
}

TEST_CASE("knowledge pack rejects unknown tile ids") {
  const auto tiles = pattern_tiles(10, 4, 1);
  TempDir dir;
  try {
    export_knowledge(tiles, {{999, "x"}}, dir / "pack.json");
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kValidation);
    CHECK(std::string(e.what()).find("999") != std::string::npos);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "pack.json"));
}

TEST_CASE("knowledge files map filenames to tiles") {
  const auto tiles = pattern_tiles(3, 4, 1);
  TempDir dir;
  testing::write_bytes(dir / "k.csv",
                       "# filename,text\n\ntile_2.png,Where to buy: shop, street 5\r\ntile_0.png,x\n");
  const KnowledgeMap map = read_knowledge_file(dir / "k.csv", tiles);
  REQUIRE(map.size() == 2);
  CHECK(map.at(2) == "Where to buy: shop, street 5");
  CHECK(map.at(0) == "x");

  testing::write_bytes(dir / "bad.csv", "nosuch.png,x\n");
  CHECK(error_code_of([&] { read_knowledge_file(dir / "bad.csv", tiles); }) == ErrorCode::kValidation);
}
