// SPDX-License-Identifier: Apache-2.0
#include "attnmosaic/mosaic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <system_error>
#include <thread>

#include <json.hpp>

#include "attnmosaic/error.hpp"

namespace attnmosaic::mosaic {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Statistics and scoring

StatVector block_stats(const Image& rgb, int x0, int y0, int size) {
  const int lo_end = (size + 1) / 2;  // first half: [0, lo_end)
  const int hi_begin = size / 2;      // second half: [hi_begin, size)
  const std::array<std::pair<int, int>, 2> halves{{{0, lo_end}, {hi_begin, size}}};

  StatVector out{};
  auto region_mean = [&](int c, std::pair<int, int> ys, std::pair<int, int> xs) {
    double sum = 0.0;
    for (int y = ys.first; y < ys.second; ++y) {
      for (int x = xs.first; x < xs.second; ++x) sum += rgb.at(x0 + x, y0 + y, c);
    }
    return sum / (static_cast<double>(ys.second - ys.first) * (xs.second - xs.first));
  };

  for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] = region_mean(c, {0, size}, {0, size});
  std::size_t slot = 3;
  for (const auto& ys : halves) {
    for (const auto& xs : halves) {
      for (int c = 0; c < 3; ++c) out[slot++] = region_mean(c, ys, xs);
    }
  }
  return out;
}

double stat_distance(const StatVector& a, const StatVector& b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kStatCount; ++i) {
    const double diff = a[i] - b[i];
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

double attention_score(const StatVector& cell, const StatVector& tile) {
  return 1.0 / (stat_distance(cell, tile) + kScoreEpsilon);
}

double attention_score(const Image& cell_block, const TileRecord& tile) {
  return attention_score(block_stats(to_rgb(cell_block)), tile.stats);
}

// ---------------------------------------------------------------------------
// Ingestion

TileRecord make_tile(std::size_t id, fs::path source, const Image& original, int tile_size) {
  TileRecord tile;
  tile.id = id;
  tile.source_path = std::move(source);
  tile.width = original.width;
  tile.height = original.height;
  tile.channels = original.channels;
  tile.thumb = area_downsample(original, tile_size);
  tile.stats = block_stats(to_rgb(tile.thumb));
  return tile;
}

TileLibrary ingest_tiles(const fs::path& directory, int tile_size) {
  if (tile_size < 1) throw Error(ErrorCode::kUsage, "tile size must be >= 1");

  std::error_code ec;
  if (!fs::is_directory(directory, ec)) {
    throw Error(ErrorCode::kNoTiles, "tile directory not found: " + directory.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory, ec)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  TileLibrary library;
  for (const auto& file : files) {
    try {
      Image original = load_image(file);
      library.tiles.push_back(make_tile(library.tiles.size(), file, original, tile_size));
    } catch (const Error& err) {
      library.skipped.push_back({file, err.what()});
    }
  }
  if (library.tiles.empty()) {
    throw Error(ErrorCode::kNoTiles,
                "no decodable images in " + directory.string() + " (" +
                    std::to_string(files.size()) + " files examined)");
  }
  return library;
}

// ---------------------------------------------------------------------------
// Grid

MosaicGrid plan_grid(int target_width, int target_height, int tile_size,
                     std::optional<int> rows, std::optional<int> cols) {
  if (tile_size < 1) throw Error(ErrorCode::kUsage, "tile size must be >= 1");
  if (target_width < 1 || target_height < 1) {
    throw Error(ErrorCode::kUsage, "target dimensions must be positive");
  }
  const int max_rows = target_height / tile_size;
  const int max_cols = target_width / tile_size;
  if (max_rows == 0 || max_cols == 0) {
    throw Error(ErrorCode::kGridTooSmall,
                "target " + std::to_string(target_width) + "x" + std::to_string(target_height) +
                    " cannot hold a single " + std::to_string(tile_size) + "px tile");
  }

  MosaicGrid grid;
  grid.tile_size = tile_size;
  grid.target_width = target_width;
  grid.target_height = target_height;
  grid.rows = rows.value_or(max_rows);
  grid.cols = cols.value_or(max_cols);

  if (grid.rows < 1 || grid.cols < 1) {
    throw Error(ErrorCode::kConstraint, "rows and cols must be >= 1");
  }
  const long long used_h = static_cast<long long>(grid.rows) * tile_size;
  const long long used_w = static_cast<long long>(grid.cols) * tile_size;
  if (used_h > target_height) {
    throw Error(ErrorCode::kConstraint,
                "m*s <= H violated: " + std::to_string(grid.rows) + "*" +
                    std::to_string(tile_size) + " = " + std::to_string(used_h) + " > H = " +
                    std::to_string(target_height));
  }
  if (used_w > target_width) {
    throw Error(ErrorCode::kConstraint,
                "n*s <= W violated: " + std::to_string(grid.cols) + "*" +
                    std::to_string(tile_size) + " = " + std::to_string(used_w) + " > W = " +
                    std::to_string(target_width));
  }
  grid.crop_x = static_cast<int>((target_width - used_w) / 2);
  grid.crop_y = static_cast<int>((target_height - used_h) / 2);
  return grid;
}

// ---------------------------------------------------------------------------
// Composition

namespace {

CellAssignment best_tile(const StatVector& cell, std::span<const TileRecord> tiles, int row,
                         int col) {
  CellAssignment best{row, col, tiles.front().id, -std::numeric_limits<double>::infinity()};
  for (const TileRecord& tile : tiles) {
    const double score = attention_score(cell, tile.stats);
    // strict > keeps the earliest (lowest id) tile on ties
    if (score > best.score || (score == best.score && tile.id < best.tile_id)) {
      best.tile_id = tile.id;
      best.score = score;
    }
  }
  return best;
}

}  // namespace

MosaicGrid compose(const Image& target, std::span<const TileRecord> tiles, MosaicGrid grid,
                   unsigned threads) {
  if (tiles.empty()) throw Error(ErrorCode::kNoTiles, "compose needs at least one tile");
  if (target.width != grid.target_width || target.height != grid.target_height) {
    throw Error(ErrorCode::kConstraint, "target size does not match the planned grid");
  }
  const Image rgb = to_rgb(target);
  const int s = grid.tile_size;
  grid.cells.assign(static_cast<std::size_t>(grid.rows) * grid.cols, {});

  auto work = [&](int row_begin, int row_end) {
    for (int i = row_begin; i < row_end; ++i) {
      for (int j = 0; j < grid.cols; ++j) {
        const StatVector cell = block_stats(rgb, grid.crop_x + j * s, grid.crop_y + i * s, s);
        grid.cells[static_cast<std::size_t>(i) * grid.cols + j] = best_tile(cell, tiles, i, j);
      }
    }
  };

  const unsigned workers = std::clamp(threads == 0 ? std::thread::hardware_concurrency() : threads,
                                      1u, static_cast<unsigned>(grid.rows));
  if (workers == 1) {
    work(0, grid.rows);
  } else {
    std::vector<std::jthread> pool;
    const int chunk = (grid.rows + static_cast<int>(workers) - 1) / static_cast<int>(workers);
    for (int begin = 0; begin < grid.rows; begin += chunk) {
      pool.emplace_back(work, begin, std::min(grid.rows, begin + chunk));
    }
  }
  return grid;
}

Image render_mosaic(const MosaicGrid& grid, std::span<const TileRecord> tiles) {
  const int s = grid.tile_size;
  Image out(grid.cols * s, grid.rows * s, 3);
  for (const CellAssignment& cell : grid.cells) {
    if (cell.tile_id >= tiles.size()) {
      throw Error(ErrorCode::kValidation, "cell references unknown tile " + std::to_string(cell.tile_id));
    }
    paste(out, to_rgb(tiles[cell.tile_id].thumb), cell.col * s, cell.row * s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metadata

namespace {

json to_json(const BundleMetadata& meta) {
  json doc;
  doc["version"] = meta.version;
  doc["grid"] = {{"rows", meta.grid.rows}, {"cols", meta.grid.cols}, {"tile_size", meta.grid.tile_size}};
  doc["target"] = {{"width", meta.grid.target_width},
                   {"height", meta.grid.target_height},
                   {"crop", json::array({meta.grid.crop_x, meta.grid.crop_y})}};
  json cells = json::array();
  for (const auto& c : meta.grid.cells) {
    cells.push_back({{"row", c.row}, {"col", c.col}, {"tile_id", c.tile_id}, {"score", c.score}});
  }
  doc["cells"] = std::move(cells);
  json tiles = json::array();
  for (const auto& t : meta.tiles) {
    tiles.push_back({{"id", t.id},
                     {"original", t.original},
                     {"width", t.width},
                     {"height", t.height},
                     {"channels", t.channels},
                     {"knowledge", t.knowledge}});
  }
  doc["tiles"] = std::move(tiles);
  return doc;
}

[[noreturn]] void bad_key(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::kValidation, "metadata key '" + key + "': " + what);
}

const json& member(const json& obj, const char* key, const std::string& path) {
  const std::string full = path.empty() ? key : path + "." + key;
  if (!obj.is_object()) bad_key(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) bad_key(full, "missing");
  return *it;
}

template <typename T>
T get_int(const json& obj, const char* key, const std::string& path) {
  const json& v = member(obj, key, path);
  if (!v.is_number_integer()) bad_key(path.empty() ? key : path + "." + key, "expected an integer");
  return v.get<T>();
}

std::string get_string(const json& obj, const char* key, const std::string& path) {
  const json& v = member(obj, key, path);
  if (!v.is_string()) bad_key(path.empty() ? key : path + "." + key, "expected a string");
  return v.get<std::string>();
}

}  // namespace

std::string serialize_metadata(const BundleMetadata& metadata) {
  return to_json(metadata).dump(2) + "\n";
}

BundleMetadata parse_metadata(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kValidation, std::string("metadata is not valid JSON: ") + e.what());
  }
  BundleMetadata meta;
  meta.version = get_int<int>(doc, "version", "");
  if (meta.version != 1) bad_key("version", "unsupported version " + std::to_string(meta.version));

  const json& grid = member(doc, "grid", "");
  meta.grid.rows = get_int<int>(grid, "rows", "grid");
  meta.grid.cols = get_int<int>(grid, "cols", "grid");
  meta.grid.tile_size = get_int<int>(grid, "tile_size", "grid");

  const json& target = member(doc, "target", "");
  meta.grid.target_width = get_int<int>(target, "width", "target");
  meta.grid.target_height = get_int<int>(target, "height", "target");
  const json& crop = member(target, "crop", "target");
  if (!crop.is_array() || crop.size() != 2 || !crop[0].is_number_integer() ||
      !crop[1].is_number_integer()) {
    bad_key("target.crop", "expected [x0, y0]");
  }
  meta.grid.crop_x = crop[0].get<int>();
  meta.grid.crop_y = crop[1].get<int>();

  const json& cells = member(doc, "cells", "");
  if (!cells.is_array()) bad_key("cells", "expected an array");
  if (cells.size() != static_cast<std::size_t>(meta.grid.rows) * meta.grid.cols) {
    bad_key("cells", "expected rows*cols entries");
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string path = "cells[" + std::to_string(i) + "]";
    CellAssignment c;
    c.row = get_int<int>(cells[i], "row", path);
    c.col = get_int<int>(cells[i], "col", path);
    c.tile_id = get_int<std::size_t>(cells[i], "tile_id", path);
    const json& score = member(cells[i], "score", path);
    if (!score.is_number()) bad_key(path + ".score", "expected a number");
    c.score = score.get<double>();
    meta.grid.cells.push_back(c);
  }

  const json& tiles = member(doc, "tiles", "");
  if (!tiles.is_array()) bad_key("tiles", "expected an array");
  std::set<std::size_t> ids;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::string path = "tiles[" + std::to_string(i) + "]";
    TileEntry t;
    t.id = get_int<std::size_t>(tiles[i], "id", path);
    t.original = get_string(tiles[i], "original", path);
    t.width = get_int<int>(tiles[i], "width", path);
    t.height = get_int<int>(tiles[i], "height", path);
    t.channels = get_int<int>(tiles[i], "channels", path);
    t.knowledge = get_string(tiles[i], "knowledge", path);
    ids.insert(t.id);
    meta.tiles.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < meta.grid.cells.size(); ++i) {
    if (!ids.contains(meta.grid.cells[i].tile_id)) {
      bad_key("cells[" + std::to_string(i) + "].tile_id", "does not resolve in tiles");
    }
  }
  return meta;
}

BundleMetadata build_metadata(const MosaicGrid& grid, std::span<const TileRecord> tiles,
                              const KnowledgeMap& knowledge) {
  std::set<std::size_t> used;
  for (const auto& cell : grid.cells) {
    if (cell.tile_id >= tiles.size()) {
      throw Error(ErrorCode::kValidation, "cell references unknown tile " + std::to_string(cell.tile_id));
    }
    used.insert(cell.tile_id);
  }

  // Filenames shared by two referenced tiles get an id prefix.
  std::map<std::string, int> name_count;
  for (std::size_t id : used) ++name_count[tiles[id].source_path.filename().string()];

  BundleMetadata meta;
  meta.grid = grid;
  for (std::size_t id : used) {
    const TileRecord& tile = tiles[id];
    std::string name = tile.source_path.filename().string();
    if (name_count[name] > 1) name = std::to_string(id) + "_" + name;
    TileEntry entry;
    entry.id = id;
    entry.original = "originals/" + name;
    entry.width = tile.width;
    entry.height = tile.height;
    entry.channels = tile.channels;
    if (auto it = knowledge.find(id); it != knowledge.end()) entry.knowledge = it->second;
    meta.tiles.push_back(std::move(entry));
  }
  return meta;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out.flush()) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

void validate_knowledge_keys(std::span<const TileRecord> tiles, const KnowledgeMap& knowledge) {
  for (const auto& [id, text] : knowledge) {
    if (id >= tiles.size()) {
      throw Error(ErrorCode::kValidation,
                  "knowledge refers to unknown tile id " + std::to_string(id) + " (library has " +
                      std::to_string(tiles.size()) + " tiles)");
    }
  }
}

}  // namespace

Bundle render_and_emit(const MosaicGrid& grid, std::span<const TileRecord> tiles,
                       const KnowledgeMap& knowledge, const fs::path& out_dir) {
  if (grid.cells.size() != static_cast<std::size_t>(grid.rows) * grid.cols) {
    throw Error(ErrorCode::kValidation, "grid is not fully assigned");
  }
  validate_knowledge_keys(tiles, knowledge);

  Bundle bundle;
  bundle.directory = out_dir;
  bundle.mosaic_path = out_dir / "mosaic.png";
  bundle.metadata_path = out_dir / "metadata.json";
  bundle.originals_dir = out_dir / "originals";
  bundle.metadata = build_metadata(grid, tiles, knowledge);

  std::error_code ec;
  fs::create_directories(bundle.originals_dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "cannot create " + bundle.originals_dir.string() + ": " + ec.message());
  }

  for (const TileEntry& entry : bundle.metadata.tiles) {
    const fs::path& source = tiles[entry.id].source_path;
    if (!fs::is_regular_file(source, ec)) {
      throw Error(ErrorCode::kIo, "tile " + std::to_string(entry.id) + ": source file missing: " +
                                      source.string());
    }
    fs::copy_file(source, out_dir / entry.original, fs::copy_options::overwrite_existing, ec);
    if (ec) {
      throw Error(ErrorCode::kIo, "tile " + std::to_string(entry.id) + ": cannot copy original: " +
                                      ec.message());
    }
  }

  save_image(render_mosaic(grid, tiles), bundle.mosaic_path);
  write_text(bundle.metadata_path, serialize_metadata(bundle.metadata));
  return bundle;
}

// ---------------------------------------------------------------------------
// Knowledge

KnowledgeMap read_knowledge_file(const fs::path& path, std::span<const TileRecord> tiles) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read knowledge file " + path.string());

  std::map<std::string, std::size_t> by_name;
  for (const auto& tile : tiles) by_name.emplace(tile.source_path.filename().string(), tile.id);

  KnowledgeMap knowledge;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::kValidation,
                  path.string() + ":" + std::to_string(line_no) + ": expected 'filename,text'");
    }
    std::string name = line.substr(first, comma - first);
    while (!name.empty() && (name.back() == ' ' || name.back() == '\t')) name.pop_back();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw Error(ErrorCode::kValidation, path.string() + ":" + std::to_string(line_no) +
                                              ": no tile named '" + name + "'");
    }
    knowledge[it->second] = line.substr(comma + 1);
  }
  return knowledge;
}

std::string knowledge_pack(std::span<const TileRecord> tiles, const KnowledgeMap& knowledge) {
  validate_knowledge_keys(tiles, knowledge);
  json records = json::array();
  for (const auto& tile : tiles) {
    auto it = knowledge.find(tile.id);
    records.push_back({{"tile_id", tile.id},
                       {"source", tile.source_path.filename().string()},
                       {"knowledge", it == knowledge.end() ? std::string() : it->second}});
  }
  json doc;
  doc["version"] = 1;
  doc["records"] = std::move(records);
  return doc.dump(2) + "\n";
}

void export_knowledge(std::span<const TileRecord> tiles, const KnowledgeMap& knowledge,
                      const fs::path& out) {
  const std::string text = knowledge_pack(tiles, knowledge);
  if (out.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
  }
  write_text(out, text);
}

}  // namespace attnmosaic::mosaic
