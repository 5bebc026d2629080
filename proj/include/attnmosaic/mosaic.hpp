// SPDX-License-Identifier: Apache-2.0
//
// Photomosaic composition: tile ingestion, grid planning under the
// m*s <= H, n*s <= W constraints, per-cell attention-score matching and
// bundle emission for the click-and-display viewer.
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attnmosaic/image.hpp"

namespace attnmosaic::mosaic {

/// Per-channel global mean followed by per-channel means of the four
/// quadrants (TL, TR, BL, BR), RGB order: 3 + 4 * 3 = 15 entries.
inline constexpr std::size_t kStatCount = 15;
using StatVector = std::array<double, kStatCount>;

/// Regularizer in score = 1 / (d + eps).
inline constexpr double kScoreEpsilon = 1e-6;

struct TileRecord {
  std::size_t id = 0;
  std::filesystem::path source_path;
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3, as decoded
  Image thumb;       // tile_size x tile_size, `channels` channels
  StatVector stats{};  // computed on the RGB-promoted thumb
};

struct SkippedFile {
  std::filesystem::path path;
  std::string reason;
};

struct TileLibrary {
  std::vector<TileRecord> tiles;
  std::vector<SkippedFile> skipped;
};

struct CellAssignment {
  int row = 0;
  int col = 0;
  std::size_t tile_id = 0;
  double score = 0.0;

  friend bool operator==(const CellAssignment&, const CellAssignment&) = default;
};

struct MosaicGrid {
  int rows = 0;
  int cols = 0;
  int tile_size = 0;
  int target_width = 0;
  int target_height = 0;
  int crop_x = 0;
  int crop_y = 0;
  std::vector<CellAssignment> cells;  // row-major, empty until composed

  friend bool operator==(const MosaicGrid&, const MosaicGrid&) = default;
};

using KnowledgeMap = std::map<std::size_t, std::string>;

// ---------------------------------------------------------------------------
// Statistics and scoring

/// Statistic vector of the size x size RGB window at (x0, y0). Quadrants
/// split at ceil(size/2) / floor(size/2), so for odd sizes the middle
/// row/column belongs to both halves and no quadrant is ever empty.
StatVector block_stats(const Image& rgb, int x0, int y0, int size);

inline StatVector block_stats(const Image& rgb_block) {
  return block_stats(rgb_block, 0, 0, rgb_block.width);
}

double stat_distance(const StatVector& a, const StatVector& b);

/// 1 / (d + eps), d the Euclidean distance between statistic vectors.
double attention_score(const StatVector& cell, const StatVector& tile);

/// Scores an s x s RGB cell block against a tile.
double attention_score(const Image& cell_block, const TileRecord& tile);

// ---------------------------------------------------------------------------
// Pipeline

/// Builds a tile from an already-decoded image.
TileRecord make_tile(std::size_t id, std::filesystem::path source, const Image& original,
                     int tile_size);

/// Reads every regular file in `directory` (sorted by filename so ids are
/// stable). Undecodable files are reported in `skipped`.
/// Throws kNoTiles when nothing decodes, kUsage when tile_size < 1.
TileLibrary ingest_tiles(const std::filesystem::path& directory, int tile_size);

/// Grid skeleton. Missing rows/cols default to floor(H/s), floor(W/s); the
/// grid window is center-cropped with leftovers split toward the top-left.
MosaicGrid plan_grid(int target_width, int target_height, int tile_size,
                     std::optional<int> rows = std::nullopt,
                     std::optional<int> cols = std::nullopt);

/// Assigns each cell its highest-scoring tile (lowest id on ties). The
/// result does not depend on `threads`.
MosaicGrid compose(const Image& target, std::span<const TileRecord> tiles, MosaicGrid grid,
                   unsigned threads = 1);

/// Mosaic image of (rows*s) x (cols*s), each cell painted with its tile thumb.
Image render_mosaic(const MosaicGrid& grid, std::span<const TileRecord> tiles);

// ---------------------------------------------------------------------------
// Bundle

struct TileEntry {
  std::size_t id = 0;
  std::string original;  // "originals/<file>"
  int width = 0;
  int height = 0;
  int channels = 0;
  std::string knowledge;

  friend bool operator==(const TileEntry&, const TileEntry&) = default;
};

struct BundleMetadata {
  int version = 1;
  MosaicGrid grid;
  std::vector<TileEntry> tiles;  // referenced tiles only, ascending id

  friend bool operator==(const BundleMetadata&, const BundleMetadata&) = default;
};

/// Pretty-printed JSON with a trailing newline; byte-stable for equal input.
std::string serialize_metadata(const BundleMetadata& metadata);

/// Strict parse; throws kValidation naming the first offending key.
BundleMetadata parse_metadata(std::string_view text);

BundleMetadata build_metadata(const MosaicGrid& grid, std::span<const TileRecord> tiles,
                              const KnowledgeMap& knowledge);

struct Bundle {
  std::filesystem::path directory;
  std::filesystem::path mosaic_path;
  std::filesystem::path metadata_path;
  std::filesystem::path originals_dir;
  BundleMetadata metadata;
};

/// Writes <out>/mosaic.png, <out>/metadata.json and <out>/originals/<file>
/// for every referenced tile. Throws kIo on write failures or when a
/// referenced source file has vanished.
Bundle render_and_emit(const MosaicGrid& grid, std::span<const TileRecord> tiles,
                       const KnowledgeMap& knowledge, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Knowledge

/// Parses "filename,text" lines ('#' comments, blank lines ignored) and
/// resolves filenames against the tile library. Unknown filenames throw
/// kValidation.
KnowledgeMap read_knowledge_file(const std::filesystem::path& path,
                                 std::span<const TileRecord> tiles);

/// Standalone knowledge pack: one record per tile with its source filename
/// and knowledge text (empty when absent).
std::string knowledge_pack(std::span<const TileRecord> tiles, const KnowledgeMap& knowledge);

/// Validates keys, then writes knowledge_pack() to `out`.
void export_knowledge(std::span<const TileRecord> tiles, const KnowledgeMap& knowledge,
                      const std::filesystem::path& out);

}  // namespace attnmosaic::mosaic
