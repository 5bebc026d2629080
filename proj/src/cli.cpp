// SPDX-License-Identifier: Apache-2.0
#include "attnmosaic/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnmosaic/curvefit.hpp"
#include "attnmosaic/error.hpp"
#include "attnmosaic/mosaic.hpp"
#include "attnmosaic/prflash.hpp"
#include "attnmosaic/rng.hpp"
#include "attnmosaic/saq.hpp"

namespace attnmosaic::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum class Format { kHuman, kRecords };

struct GlobalOptions {
  std::uint64_t seed = 42;
  std::string out;
  Format format = Format::kHuman;
};

struct ComposeOptions {
  std::string target;
  std::string tiles;
  int tile_size = 32;
  std::optional<int> rows;
  std::optional<int> cols;
  std::string knowledge;
  unsigned threads = 1;
  bool timing = false;
};

struct AttnOptions {
  std::size_t seq_len = 256;
  std::size_t head_dim = 64;
  std::size_t block_r = 16;
  std::size_t block_c = 16;
  std::size_t k = 2;
  double w = 0.5;
  double sparsity = 50.0;
  bool causal = true;
  std::size_t trials = 1;
  bool timing = false;
};

struct KvOptions {
  std::size_t prompt_len = 512;
  std::size_t gen_len = 64;
  std::size_t segment = 128;
  std::size_t group = 32;
  std::size_t dim = 64;
  std::vector<int> bits{16, 8, 4, 2};
};

struct FitOptions {
  std::string points;
  std::vector<double> init;
};

struct KnowledgeOptions {
  std::string tiles;
  std::string knowledge;
  int tile_size = 8;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Records go to stdout and, when --out names a file, to that file as well.
class RecordSink {
 public:
  RecordSink(std::ostream& out, const std::string& path) : out_(out) {
    if (!path.empty()) {
      fs::path p(path);
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      file_.open(p, std::ios::binary | std::ios::trunc);
      if (!file_) throw Error(ErrorCode::kIo, "cannot write " + path);
    }
  }

  void emit(const json& record) {
    const std::string line = record.dump();
    out_ << line << '\n';
    if (file_.is_open()) file_ << line << '\n';
  }

 private:
  std::ostream& out_;
  std::ofstream file_;
};

json ladder_json(const std::vector<int>& ladder) { return json(ladder); }

// ---------------------------------------------------------------------------

void cmd_compose(const GlobalOptions& g, const ComposeOptions& o, std::ostream& out,
                 std::ostream& err) {
  if (g.out.empty()) throw Error(ErrorCode::kUsage, "compose requires --out");
  const mosaic::TileLibrary library = mosaic::ingest_tiles(o.tiles, o.tile_size);
  for (const auto& skipped : library.skipped) {
    err << "warning: skipped " << skipped.path.filename().string() << ": " << skipped.reason << '\n';
  }
  const Image target = load_image(o.target);
  mosaic::KnowledgeMap knowledge;
  if (!o.knowledge.empty()) knowledge = mosaic::read_knowledge_file(o.knowledge, library.tiles);

  const mosaic::MosaicGrid skeleton =
      mosaic::plan_grid(target.width, target.height, o.tile_size, o.rows, o.cols);
  const auto start = Clock::now();
  const mosaic::MosaicGrid grid = mosaic::compose(target, library.tiles, skeleton, o.threads);
  const double elapsed = seconds_since(start);
  const mosaic::Bundle bundle = mosaic::render_and_emit(grid, library.tiles, knowledge, g.out);

  double score_sum = 0.0;
  for (const auto& cell : grid.cells) score_sum += cell.score;
  const double mean_score = score_sum / static_cast<double>(grid.cells.size());

  if (g.format == Format::kRecords) {
    json record;
    record["command"] = "compose";
    record["rows"] = grid.rows;
    record["cols"] = grid.cols;
    record["tile_size"] = grid.tile_size;
    record["target"] = {grid.target_width, grid.target_height};
    record["crop"] = {grid.crop_x, grid.crop_y};
    record["tiles"] = library.tiles.size();
    json skipped = json::array();
    for (const auto& s : library.skipped) skipped.push_back(s.path.filename().string());
    record["skipped"] = std::move(skipped);
    record["distinct_tiles_used"] = bundle.metadata.tiles.size();
    record["mean_score"] = mean_score;
    record["elapsed_s"] = o.timing ? json(elapsed) : json(nullptr);
    record["bundle"] = g.out;
    out << record.dump() << '\n';
  } else {
    out << "grid " << grid.rows << "x" << grid.cols << " (tile " << grid.tile_size << "px, crop "
        << grid.crop_x << "," << grid.crop_y << ")\n"
        << "tiles " << library.tiles.size() << " ingested, " << library.skipped.size()
        << " skipped, " << bundle.metadata.tiles.size() << " used\n"
        << "mean score " << mean_score << '\n';
    if (o.timing) out << "compose time " << elapsed << " s\n";
    out << "bundle written to " << g.out << '\n';
  }
}

void cmd_attn(const GlobalOptions& g, const AttnOptions& o, std::ostream& out) {
  if (o.trials == 0) throw Error(ErrorCode::kUsage, "--trials must be >= 1");
  RecordSink sink(out, g.format == Format::kRecords ? g.out : std::string());

  double row_sum = 0.0;
  double col_sum = 0.0;
  double worst = 0.0;
  for (std::size_t trial = 0; trial < o.trials; ++trial) {
    prflash::AttnConfig config;
    config.context_length = o.seq_len;
    config.head_dim = o.head_dim;
    config.block_rows = o.block_r;
    config.block_cols = o.block_c;
    config.threshold_range = o.k;
    config.weight = o.w;
    config.target_drop = o.sparsity;
    config.causal = o.causal;
    config.seed = g.seed + trial;
    prflash::validate(config);

    Rng rng(config.seed);
    prflash::AttnTensors tensors{rng.split(3).uniform_matrix(o.seq_len, o.head_dim, -1.0, 1.0),
                                 rng.split(4).uniform_matrix(o.seq_len, o.head_dim, -1.0, 1.0),
                                 rng.split(5).uniform_matrix(o.seq_len, o.head_dim, -1.0, 1.0)};

    const prflash::BlockMaskPlan plan = prflash::build_mask(config);
    auto start = Clock::now();
    const Matrix dense = prflash::dense_attention(tensors, config.causal);
    const double dense_time = seconds_since(start);
    start = Clock::now();
    const Matrix sparse = prflash::sparse_attention(tensors, plan, config);
    const double sparse_time = seconds_since(start);

    double max_diff = 0.0;
    for (std::size_t i = 0; i < dense.data().size(); ++i) {
      max_diff = std::max(max_diff, std::abs(dense.data()[i] - sparse.data()[i]));
    }
    row_sum += plan.kept_row_fraction();
    col_sum += plan.kept_col_fraction();
    worst = std::max(worst, max_diff);

    json record;
    record["N"] = config.context_length;
    record["B_r"] = config.block_rows;
    record["B_c"] = config.block_cols;
    record["k"] = config.threshold_range;
    record["w"] = config.weight;
    record["s"] = config.target_drop;
    record["seed"] = config.seed;
    record["causal"] = config.causal;
    record["trial"] = trial;
    record["s_adj"] = plan.sparsity_threshold;
    record["kept_row_fraction"] = plan.kept_row_fraction();
    record["kept_col_fraction"] = plan.kept_col_fraction();
    record["max_abs_diff_vs_dense"] = max_diff;
    record["wall_time_dense"] = o.timing ? json(dense_time) : json(nullptr);
    record["wall_time_sparse"] = o.timing ? json(sparse_time) : json(nullptr);
    if (g.format == Format::kRecords) {
      sink.emit(record);
    } else {
      out << "trial " << trial << ": seed " << config.seed << ", s_adj " << plan.sparsity_threshold
          << ", kept rows " << plan.kept_row_fraction() << ", kept cols "
          << plan.kept_col_fraction() << ", max |sparse-dense| " << max_diff;
      if (o.timing) out << ", dense " << dense_time << " s, sparse " << sparse_time << " s";
      out << '\n';
    }
  }
  if (g.format == Format::kHuman) {
    const auto n = static_cast<double>(o.trials);
    out << "mean kept rows " << row_sum / n << ", mean kept cols " << col_sum / n
        << ", worst max |sparse-dense| " << worst << '\n';
  }
}

void cmd_kv(const GlobalOptions& g, const KvOptions& o, std::ostream& out) {
  saq::StaircaseConfig config;
  config.segment_size = o.segment;
  config.group_size = o.group;
  config.ladder = o.bits;
  saq::validate(config);
  if (o.prompt_len == 0) throw Error(ErrorCode::kEmptyPrompt, "--prompt-len must be >= 1");
  if (o.dim == 0) throw Error(ErrorCode::kUsage, "--dim must be >= 1");

  const Rng rng(g.seed);
  const saq::Projections weights = saq::Projections::random(o.dim, g.seed);
  const Matrix prompt = rng.split(21).uniform_matrix(o.prompt_len, o.dim, -1.0, 1.0);
  const Matrix stream = rng.split(22).uniform_matrix(o.gen_len, o.dim, -1.0, 1.0);

  saq::SaqDecoder decoder(weights, config);
  saq::BaselineDecoder baseline(weights);
  decoder.prefill(prompt);
  baseline.prefill(prompt);

  RecordSink sink(out, g.format == Format::kRecords ? g.out : std::string());
  auto base_record = [&] {
    json r;
    r["l_prompt"] = o.prompt_len;
    r["gen_len"] = o.gen_len;
    r["S"] = o.segment;
    r["G"] = o.group;
    r["ladder"] = ladder_json(o.bits);
    r["seed"] = g.seed;
    return r;
  };

  double overall_max = 0.0;
  double overall_sum = 0.0;
  for (std::size_t step = 0; step < o.gen_len; ++step) {
    const auto got = decoder.decode_step(stream.row(step));
    const auto want = baseline.decode_step(stream.row(step));
    double max_err = 0.0;
    double sum_err = 0.0;
    for (std::size_t x = 0; x < got.size(); ++x) {
      const double e = std::abs(got[x] - want[x]);
      max_err = std::max(max_err, e);
      sum_err += e;
    }
    const double mean_err = sum_err / static_cast<double>(got.size());
    overall_max = std::max(overall_max, max_err);
    overall_sum += mean_err;

    json record = base_record();
    record["record"] = "step";
    record["step"] = step;
    record["max_abs_err"] = max_err;
    record["mean_abs_err"] = mean_err;
    record["theoretical_cache_bits"] = decoder.cache().theoretical_bits();
    record["baseline_cache_bits"] = decoder.cache().full_precision_bits();
    if (g.format == Format::kRecords) {
      sink.emit(record);
    } else {
      out << "step " << step << ": max |err| " << max_err << ", mean |err| " << mean_err << '\n';
    }
  }

  const auto& cache = decoder.cache();
  const double ratio = static_cast<double>(cache.theoretical_bits()) /
                       static_cast<double>(cache.full_precision_bits());
  json summary = base_record();
  summary["record"] = "summary";
  summary["steps"] = o.gen_len;
  summary["max_abs_err"] = o.gen_len ? json(overall_max) : json(nullptr);
  summary["mean_abs_err"] =
      o.gen_len ? json(overall_sum / static_cast<double>(o.gen_len)) : json(nullptr);
  summary["theoretical_cache_bits"] = cache.theoretical_bits();
  summary["baseline_cache_bits"] = cache.full_precision_bits();
  summary["cache_bits_ratio"] = ratio;
  summary["quantized_groups"] = cache.groups().size();
  summary["residual_tokens"] = cache.residual_length();
  if (g.format == Format::kRecords) {
    sink.emit(summary);
  } else {
    out << "tokens " << cache.total_tokens() << ", groups " << cache.groups().size()
        << ", residual " << cache.residual_length() << '\n'
        << "cache bits " << cache.theoretical_bits() << " / " << cache.full_precision_bits()
        << " (ratio " << ratio << ")\n";
    if (o.gen_len) {
      out << "max |err| " << overall_max << ", mean |err| "
          << overall_sum / static_cast<double>(o.gen_len) << '\n';
    }
  }
}

void cmd_fit(const GlobalOptions& g, const FitOptions& o, std::ostream& out) {
  const auto points = curvefit::read_points(o.points);
  std::optional<curvefit::CurveParams> init;
  if (!o.init.empty()) {
    if (o.init.size() != 4) throw Error(ErrorCode::kUsage, "--init takes exactly 4 values");
    init = curvefit::CurveParams{o.init[0], o.init[1], o.init[2], o.init[3]};
  }
  const curvefit::FitResult result = curvefit::fit_theta(points, init);
  const std::string doc = curvefit::parameter_document(result);
  if (!g.out.empty()) {
    fs::path p(g.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream file(p, std::ios::binary | std::ios::trunc);
    if (!(file << doc << '\n')) throw Error(ErrorCode::kIo, "cannot write " + g.out);
  }
  if (g.format == Format::kRecords) {
    out << doc << '\n';
  } else {
    std::ostringstream line;
    line << std::setprecision(10) << "a1 " << result.params.a1 << ", a2 " << result.params.a2
         << ", a3 " << result.params.a3 << ", a4 " << result.params.a4 << '\n'
         << "residual " << result.residual << " after " << result.iterations << " iterations\n";
    out << line.str();
  }
}

void cmd_export_knowledge(const GlobalOptions& g, const KnowledgeOptions& o, std::ostream& out) {
  if (g.out.empty()) throw Error(ErrorCode::kUsage, "export-knowledge requires --out");
  const mosaic::TileLibrary library = mosaic::ingest_tiles(o.tiles, o.tile_size);
  mosaic::KnowledgeMap knowledge;
  if (!o.knowledge.empty()) knowledge = mosaic::read_knowledge_file(o.knowledge, library.tiles);
  mosaic::export_knowledge(library.tiles, knowledge, g.out);
  if (g.format == Format::kRecords) {
    json record;
    record["command"] = "export-knowledge";
    record["records"] = library.tiles.size();
    record["with_knowledge"] = knowledge.size();
    record["out"] = g.out;
    out << record.dump() << '\n';
  } else {
    out << "knowledge pack with " << library.tiles.size() << " records (" << knowledge.size()
        << " with text) written to " << g.out << '\n';
  }
}

void add_globals(CLI::App& app, GlobalOptions& g, std::string& format) {
  app.add_option("--seed", g.seed, "Random seed")->envname("ATTNMOSAIC_SEED");
  app.add_option("--out", g.out, "Output path (bundle dir, report file or document)");
  app.add_option("--format", format, "Output format")
      ->check(CLI::IsMember({"human", "records"}));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"attnmosaic: attention-scored photomosaics, block-sparse attention and "
               "staircase KV-cache quantization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "attnmosaic 1.0");

  GlobalOptions global;
  std::string format = "human";
  add_globals(app, global, format);

  ComposeOptions compose;
  auto* c = app.add_subcommand("compose", "Compose a photomosaic bundle");
  c->fallthrough();
  c->add_option("--target", compose.target, "Target image")->required();
  c->add_option("--tiles", compose.tiles, "Directory of tile images")->required();
  c->add_option("--tile-size", compose.tile_size, "Tile edge s in pixels")->check(CLI::PositiveNumber);
  c->add_option("--rows", compose.rows, "Grid rows m (default floor(H/s))");
  c->add_option("--cols", compose.cols, "Grid columns n (default floor(W/s))");
  c->add_option("--knowledge", compose.knowledge, "filename,text mapping file");
  c->add_option("--threads", compose.threads, "Worker threads, 0 = all cores");
  c->add_flag("--timing", compose.timing, "Report wall time");

  AttnOptions attn;
  auto* a = app.add_subcommand("attn", "Probabilistic block-sparse attention vs dense");
  a->fallthrough();
  a->add_option("--seq-len", attn.seq_len, "Context length N")->check(CLI::PositiveNumber);
  a->add_option("--head-dim", attn.head_dim, "Head dimension")->check(CLI::PositiveNumber);
  a->add_option("--block-r", attn.block_r, "Query block size B_r")->check(CLI::PositiveNumber);
  a->add_option("--block-c", attn.block_c, "Key block size B_c")->check(CLI::PositiveNumber);
  a->add_option("--k", attn.k, "Threshold range k in blocks");
  a->add_option("--w", attn.w, "Weight w in [0,1]");
  a->add_option("--sparsity", attn.sparsity, "Target drop percentage s in [0,100]");
  a->add_flag("--causal,!--no-causal", attn.causal, "Causal masking (default on)");
  a->add_option("--trials", attn.trials, "Number of seeded trials");
  a->add_flag("--timing", attn.timing, "Report wall times");

  KvOptions kv;
  std::string bits = "16,8,4,2";
  auto* k = app.add_subcommand("kv", "Staircase-quantized KV-cache decoding vs baseline");
  k->fallthrough();
  k->add_option("--prompt-len", kv.prompt_len, "Prompt tokens l_prompt");
  k->add_option("--gen-len", kv.gen_len, "Decode steps");
  k->add_option("--segment", kv.segment, "Segment size S")->check(CLI::PositiveNumber);
  k->add_option("--group", kv.group, "Group size G")->check(CLI::PositiveNumber);
  k->add_option("--dim", kv.dim, "Model dimension d")->check(CLI::PositiveNumber);
  k->add_option("--bits", bits, "Bit ladder, e.g. 16,8,4,2");

  FitOptions fit;
  auto* f = app.add_subcommand("fit", "Fit the smoothing curve to x,y points");
  f->fallthrough();
  f->add_option("--points", fit.points, "Two-column x,y file")->required();
  f->add_option("--init", fit.init, "Initial a1 a2 a3 a4")->delimiter(',');

  KnowledgeOptions know;
  auto* e = app.add_subcommand("export-knowledge", "Write a knowledge pack for the tile library");
  e->fallthrough();
  e->add_option("--tiles", know.tiles, "Directory of tile images")->required();
  e->add_option("--knowledge", know.knowledge, "filename,text mapping file");
  e->add_option("--tile-size", know.tile_size, "Thumbnail size used while ingesting")
      ->check(CLI::PositiveNumber);

  std::vector<std::string> argv_storage{"attnmosaic"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_storage) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[" << code_name(ErrorCode::kUsage) << "]: " << e.what() << '\n';
    return 2;
  }

  global.format = format == "records" ? Format::kRecords : Format::kHuman;
  try {
    if (*c) {
      cmd_compose(global, compose, out, err);
    } else if (*a) {
      cmd_attn(global, attn, out);
    } else if (*k) {
      kv.bits.clear();
      std::stringstream in(bits);
      std::string item;
      while (std::getline(in, item, ',')) {
        try {
          std::size_t used = 0;
          kv.bits.push_back(std::stoi(item, &used));
          if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
          throw Error(ErrorCode::kUsage, "--bits: not an integer: '" + item + "'");
        }
      }
      cmd_kv(global, kv, out);
    } else if (*f) {
      cmd_fit(global, fit, out);
    } else if (*e) {
      cmd_export_knowledge(global, know, out);
    }
  } catch (const Error& e) {
    err << "error[" << code_name(e.code()) << "]: " << e.what() << '\n';
    return e.code() == ErrorCode::kUsage ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    err << "error[" << code_name(ErrorCode::kIo) << "]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace attnmosaic::cli
