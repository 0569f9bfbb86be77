// wsci: command-line front end for the fusion pipeline.
//
// Subcommands cover the full loop: synth -> grid -> sample -> train ->
// transfer -> infer -> evaluate -> attribute. Conventions:
//   - progress and warnings go to stderr; stdout carries exactly one JSON
//     summary object per run; data lands in files only
//   - every command writes a run manifest (merged config, input hashes,
//     output paths, seed, timing) next to its primary output
//   - all writes are atomic (temp file + rename), so reruns never leave a
//     half-written artifact behind
//   - exit codes: 0 ok, 1 runtime failure, 2 usage or missing-input error

#include <chrono>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wsci/attribution.hpp"
#include "wsci/eval.hpp"
#include "wsci/infer.hpp"
#include "wsci/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Usage-class failure (bad flags, missing inputs): exit code 2.
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw usage_error("missing input file: " + path);
}

uint64_t file_hash(const std::string& path) {
  const std::string data = wsci::read_file(path);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// One manifest per command, next to the primary output.
struct ManifestBuilder {
  json doc;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  ManifestBuilder(const std::string& command, uint64_t seed) {
    doc["command"] = command;
    doc["seed"] = seed;
    doc["inputs"] = json::object();
    doc["outputs"] = json::array();
  }
  void config(const json& merged) { doc["config"] = merged; }
  void input(const std::string& path) {
    doc["inputs"][path] = file_hash(path);
  }
  void output(const std::string& path) { doc["outputs"].push_back(path); }
  void write(const std::string& path) {
    doc["timings"] = {{"seconds", std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count()}};
    wsci::write_file_atomic(path, doc.dump(2) + "\n");
  }
};

void emit(const json& summary) { std::cout << summary.dump() << "\n"; }

json load_json_file(const std::string& path) {
  require_file(path);
  try {
    return json::parse(wsci::read_file(path));
  } catch (const json::exception& e) {
    throw wsci::error("corrupt", "bad JSON in " + path + ": " + e.what());
  }
}

wsci::ArchitectureSpec arch_by_name(const std::string& name) {
  if (name == "default") return wsci::ArchitectureSpec::defaults();
  if (name == "reduced") return wsci::ArchitectureSpec::reduced();
  throw usage_error("unknown architecture '" + name + "' (default|reduced)");
}

std::vector<wsci::Chip> split_filter(std::vector<wsci::Chip> chips,
                                     const std::string& split, uint64_t seed,
                                     double test_fraction) {
  if (split == "all") return chips;
  const wsci::Split want = split == "test" ? wsci::Split::Test : wsci::Split::Train;
  std::vector<wsci::Chip> out;
  for (auto& c : chips)
    if (wsci::split_for_block(c.block_id, seed, test_fraction) == want)
      out.push_back(std::move(c));
  return out;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  uint64_t seed = 42;
  int extent = 512;
  double density = 80.0;
  double wavelength = 128.0;
  double noise = 0.05;
  int quarter = 0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  wsci::SyntheticWorld w;
  w.seed = a.seed;
  w.extent = a.extent;
  w.footprint_density = a.density;
  w.base_wavelength = a.wavelength;
  w.sar_noise = a.noise;

  ManifestBuilder mf("synth", a.seed);
  mf.config({{"seed", a.seed},
             {"extent", a.extent},
             {"density", a.density},
             {"wavelength", a.wavelength},
             {"noise", a.noise},
             {"quarter", a.quarter}});
  fs::create_directories(a.out);
  std::cerr << "synth: generating " << a.extent << "x" << a.extent
            << " world (quarter " << a.quarter << ")\n";
  auto r = wsci::synth_generate(w, a.quarter);
  auto fp = wsci::synth_footprints(w, a.quarter);
  const std::string sar = a.out + "/sar.raster", truth = a.out + "/truth.raster",
                    target = a.out + "/target.raster",
                    foot = a.out + "/footprints.csv";
  wsci::write_raster(sar, r.sar);
  wsci::write_raster(truth, r.truth);
  wsci::write_raster(target, r.target);
  wsci::write_footprints_csv(foot, fp);
  for (const auto& p : {sar, truth, target, foot}) mf.output(p);
  mf.write(a.out + "/manifest.json");
  emit({{"command", "synth"},
        {"extent", a.extent},
        {"footprints", fp.size()},
        {"outputs", {sar, truth, target, foot}}});
  return 0;
}

// ---- grid -----------------------------------------------------------------

struct GridArgs {
  std::string footprints, out;
  int quarter = 0;
  int width = 512, height = 512;
  double origin_x = 0.0, origin_y = 0.0;
};

int run_grid(const GridArgs& a) {
  require_file(a.footprints);
  ManifestBuilder mf("grid", 0);
  mf.config({{"quarter", a.quarter},
             {"width", a.width},
             {"height", a.height},
             {"origin_x", a.origin_x},
             {"origin_y", a.origin_y}});
  mf.input(a.footprints);
  auto records = wsci::read_footprints_csv(a.footprints);
  std::cerr << "grid: " << records.size() << " footprints -> " << a.width << "x"
            << a.height << " raster\n";
  auto raster = wsci::grid_footprints(records, a.width, a.height, a.origin_x,
                                      a.origin_y, a.quarter);
  wsci::write_raster(a.out, raster);
  int64_t filled = 0;
  for (float v : raster.bands[0])
    if (std::isfinite(v)) ++filled;
  mf.output(a.out);
  mf.write(a.out + ".manifest.json");
  emit({{"command", "grid"},
        {"footprints", records.size()},
        {"filled_cells", filled},
        {"out", a.out}});
  return 0;
}

// ---- sample ---------------------------------------------------------------

struct SampleArgs {
  std::string sar, target, out;
  int quarter = 0;
  uint64_t seed = 0;
  std::string split = "all";  // all | train | test
  uint64_t split_seed = 0;
  double test_fraction = 0.2;
};

int run_sample(const SampleArgs& a) {
  require_file(a.sar);
  require_file(a.target);
  ManifestBuilder mf("sample", a.seed);
  mf.config({{"quarter", a.quarter},
             {"seed", a.seed},
             {"split", a.split},
             {"split_seed", a.split_seed},
             {"test_fraction", a.test_fraction}});
  mf.input(a.sar);
  mf.input(a.target);
  auto sar = wsci::read_raster(a.sar);
  auto target = wsci::read_raster(a.target);
  auto chips = wsci::sample_chips(sar, target, a.quarter, a.seed);
  const size_t total = chips.size();
  chips = split_filter(std::move(chips), a.split, a.split_seed, a.test_fraction);
  std::cerr << "sample: " << chips.size() << " of " << total
            << " chips kept (split=" << a.split << ")\n";
  wsci::write_chip_file(a.out, chips);
  mf.output(a.out);
  mf.write(a.out + ".manifest.json");
  emit({{"command", "sample"},
        {"chips_total", total},
        {"chips_kept", chips.size()},
        {"out", a.out}});
  return 0;
}

// ---- train / transfer -----------------------------------------------------

struct TrainArgs {
  std::string chips, out, config_path, history;
  std::string arch = "reduced";
  // flag overrides; negative/empty means "not set on the command line"
  int epochs = -1;
  int batch_size = -1;
  double lr = -1.0;
  double grad_clip = -1.0;
  int64_t seed = -1;
};

wsci::TrainConfig merged_train_config(const TrainArgs& a, json& echo) {
  json base = a.config_path.empty() ? json::object() : load_json_file(a.config_path);
  if (a.epochs >= 0) base["epochs"] = a.epochs;
  if (a.batch_size >= 0) base["batch_size"] = a.batch_size;
  if (a.lr >= 0.0) base["initial_lr"] = a.lr;
  if (a.grad_clip >= 0.0) base["grad_clip"] = a.grad_clip;
  if (a.seed >= 0) base["seed"] = uint64_t(a.seed);
  auto cfg = wsci::TrainConfig::from_json(base);
  echo = cfg.to_json();
  return cfg;
}

int run_train(const TrainArgs& a) {
  require_file(a.chips);
  json echo;
  auto cfg = merged_train_config(a, echo);
  ManifestBuilder mf("train", cfg.seed);
  echo["arch"] = a.arch;
  mf.config(echo);
  mf.input(a.chips);
  auto chips = wsci::read_chip_file(a.chips);
  if (chips.empty()) throw wsci::error("empty", "no chips in " + a.chips);

  wsci::ArchitectureSpec spec = arch_by_name(a.arch);
  wsci::compute_norm_constants(chips, spec.norm_mean, spec.norm_std);
  auto model = wsci::build_model<float>(spec, wsci::RngStream(cfg.seed, 0));
  std::cerr << "train: " << chips.size() << " chips, "
            << wsci::count_parameters(model) << " parameters, " << cfg.epochs
            << " epochs\n";
  auto res = wsci::train(model, chips, cfg, nullptr,
                         [](const wsci::TrainHistory::Row& row) {
                           std::cerr << "train: epoch " << row.epoch << " loss "
                                     << row.mean_loss << " lr " << row.lr
                                     << std::endl;
                         });
  wsci::save_checkpoint(a.out, model, nullptr, cfg.epochs, echo);
  mf.output(a.out);
  if (!a.history.empty()) {
    wsci::write_file_atomic(a.history, res.history.to_csv());
    mf.output(a.history);
  }
  mf.write(a.out + ".manifest.json");
  emit({{"command", "train"},
        {"steps", res.steps},
        {"skipped_batches", res.skipped_batches},
        {"final_loss", res.history.rows.back().mean_loss},
        {"parameters", wsci::count_parameters(model)},
        {"model_hash", wsci::model_hash(model)},
        {"out", a.out}});
  return 0;
}

struct TransferArgs {
  std::string base, chips, out, config_path, history;
  std::string mode = "frozen_head";
  int epochs = -1;
  int batch_size = -1;
  double lr = -1.0;
  int64_t seed = -1;
};

int run_transfer(const TransferArgs& a) {
  require_file(a.base);
  require_file(a.chips);
  TrainArgs ta;
  ta.config_path = a.config_path;
  ta.epochs = a.epochs;
  ta.batch_size = a.batch_size;
  ta.lr = a.lr;
  ta.seed = a.seed;
  json echo;
  auto cfg = merged_train_config(ta, echo);
  ManifestBuilder mf("transfer", cfg.seed);
  echo["mode"] = a.mode;
  mf.config(echo);
  mf.input(a.base);
  mf.input(a.chips);
  auto ckpt = wsci::load_checkpoint(a.base);
  auto chips = wsci::read_chip_file(a.chips);
  std::cerr << "transfer: mode=" << a.mode << ", " << chips.size()
            << " chips\n";
  auto res = wsci::transfer_train(ckpt.model, chips, a.mode, cfg,
                                  [](const wsci::TrainHistory::Row& row) {
                                    std::cerr << "transfer: epoch " << row.epoch
                                              << " loss " << row.mean_loss
                                              << " lr " << row.lr << std::endl;
                                  });
  wsci::save_checkpoint(a.out, ckpt.model, nullptr, cfg.epochs, echo);
  mf.output(a.out);
  if (!a.history.empty()) {
    wsci::write_file_atomic(a.history, res.history.to_csv());
    mf.output(a.history);
  }
  mf.write(a.out + ".manifest.json");
  emit({{"command", "transfer"},
        {"mode", a.mode},
        {"gradient_parameters", res.gradient_parameters},
        {"backward_seconds", res.backward_seconds},
        {"final_loss", res.history.rows.back().mean_loss},
        {"out", a.out}});
  return 0;
}

// ---- infer ----------------------------------------------------------------

struct InferArgs {
  std::string model, sar, out;
  int tile_size = 1600;
  int workers = 1;
  int passes = 1;
  int offsets = 5;
  int quarter = 0;
  uint64_t seed = 0;
};

int run_infer(const InferArgs& a) {
  require_file(a.model);
  require_file(a.sar);
  if (a.offsets < 1 || a.offsets > int(wsci::kDefaultOffsets.size()))
    throw usage_error("--offsets must be in [1, " +
                      std::to_string(wsci::kDefaultOffsets.size()) + "]");
  ManifestBuilder mf("infer", a.seed);
  mf.config({{"tile_size", a.tile_size},
             {"workers", a.workers},
             {"passes", a.passes},
             {"offsets", a.offsets},
             {"quarter", a.quarter},
             {"seed", a.seed}});
  mf.input(a.model);
  mf.input(a.sar);
  auto ckpt = wsci::load_checkpoint(a.model);
  auto sar = wsci::read_raster(a.sar);

  std::vector<wsci::TileJob> jobs;
  uint64_t tid = 0;
  for (int y = 0; y < sar.height; y += a.tile_size)
    for (int x = 0; x < sar.width; x += a.tile_size) {
      wsci::TileJob j;
      j.tile_id = tid++;
      j.origin_y = y;
      j.origin_x = x;
      j.size = std::min({a.tile_size, sar.height - y, sar.width - x});
      j.quarter = a.quarter;
      jobs.push_back(j);
    }
  std::vector<int> offsets(wsci::kDefaultOffsets.begin(),
                           wsci::kDefaultOffsets.begin() + a.offsets);
  std::cerr << "infer: " << jobs.size() << " tiles, " << a.workers
            << " workers, " << offsets.size() << " offsets x " << a.passes
            << " passes\n";
  wsci::InferenceReport report;
  auto mosaic = wsci::run_tiles(ckpt.model, sar, jobs, a.workers, sar.width,
                                sar.height, &report, offsets, a.passes, a.seed);
  wsci::write_raster(a.out, mosaic);
  mf.output(a.out);
  mf.doc["model_hash"] = wsci::model_hash(ckpt.model);
  mf.write(a.out + ".manifest.json");
  emit({{"command", "infer"},
        {"tiles", jobs.size()},
        {"failed_tiles", report.failed_tiles},
        {"pixels", report.pixels},
        {"pixels_per_second", report.pixels_per_second},
        {"model_hash", wsci::model_hash(ckpt.model)},
        {"out", a.out}});
  return 0;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string model, chips, report;
  std::string mosaic, truth, target;  // dense-truth mode
  int passes = 5;
  uint64_t seed = 0;
  std::vector<double> bin_edges = {6, 7, 8, 9, 10, 11, 12};
};

int run_evaluate(const EvaluateArgs& a) {
  const bool sparse_mode = !a.chips.empty();
  const bool dense_mode = !a.mosaic.empty();
  if (!sparse_mode && !dense_mode)
    throw usage_error("evaluate needs --chips (sparse) and/or --mosaic/--truth (dense)");
  if (dense_mode && (a.truth.empty() || a.target.empty()))
    throw usage_error("dense evaluation needs --mosaic, --truth, and --target");

  ManifestBuilder mf("evaluate", a.seed);
  mf.config({{"passes", a.passes}, {"seed", a.seed}, {"bin_edges", a.bin_edges}});
  json out = {{"command", "evaluate"}};

  if (sparse_mode) {
    require_file(a.model);
    require_file(a.chips);
    mf.input(a.model);
    mf.input(a.chips);
    auto ckpt = wsci::load_checkpoint(a.model);
    auto chips = wsci::read_chip_file(a.chips);
    std::cerr << "evaluate: sparse validation over " << chips.size()
              << " chips\n";
    auto sv = wsci::validate_sparse(ckpt.model, chips, a.passes, a.seed);
    auto cal = wsci::calibration_report(sv.run, a.bin_edges);
    out["sparse"] = {{"overall", sv.overall.to_json()},
                     {"calibration", cal.to_json()},
                     {"checkpoint_hash", sv.run.checkpoint_hash}};
  }
  if (dense_mode) {
    for (const auto& p : {a.mosaic, a.truth, a.target}) {
      require_file(p);
      mf.input(p);
    }
    auto mosaic = wsci::read_raster(a.mosaic);
    auto truth = wsci::read_raster(a.truth);
    auto target = wsci::read_raster(a.target);
    wsci::SiteWindow site{"full", 0, 0, std::min(mosaic.width, mosaic.height)};
    std::cerr << "evaluate: dense comparison over " << site.size << "x"
              << site.size << " window\n";
    out["dense"] = wsci::evaluate_site(mosaic, truth, target, site).to_json();
  }
  wsci::write_file_atomic(a.report, out.dump(2) + "\n");
  mf.output(a.report);
  mf.write(a.report + ".manifest.json");
  json summary = {{"command", "evaluate"}, {"report", a.report}};
  if (sparse_mode) {
    summary["sparse_r2"] = out["sparse"]["overall"]["r2"];
    summary["coverage_1sd"] = out["sparse"]["overall"]["coverage_1sd"];
  }
  if (dense_mode) summary["dense_r2"] = out["dense"]["accuracy_all"]["r2"];
  emit(summary);
  return 0;
}

// ---- attribute ------------------------------------------------------------

struct AttributeArgs {
  std::string model, chips, out;
  uint64_t chip_id = 0;
  std::string pixel = "16,16";
  int patch_radius = 1;
  int workers = 1;
  int background_sample = 100;
  uint64_t seed = 0;
};

int run_attribute(const AttributeArgs& a) {
  require_file(a.model);
  require_file(a.chips);
  int row = 0, col = 0;
  if (std::sscanf(a.pixel.c_str(), "%d,%d", &row, &col) != 2 || row < 0 ||
      col < 0 || row >= wsci::kChipCore || col >= wsci::kChipCore)
    throw usage_error("--pixel must be r,c with 0 <= r,c < " +
                      std::to_string(wsci::kChipCore));
  ManifestBuilder mf("attribute", a.seed);
  mf.config({{"chip_id", a.chip_id},
             {"pixel", a.pixel},
             {"patch_radius", a.patch_radius},
             {"background_sample", a.background_sample},
             {"seed", a.seed}});
  mf.input(a.model);
  mf.input(a.chips);
  auto ckpt = wsci::load_checkpoint(a.model);
  auto chips = wsci::read_chip_file(a.chips);
  const wsci::Chip* chip = nullptr;
  for (const auto& c : chips)
    if (c.id == a.chip_id) chip = &c;
  if (!chip)
    throw wsci::error("missing",
                      "chip id " + std::to_string(a.chip_id) + " not in " + a.chips);
  std::cerr << "attribute: chip " << a.chip_id << ", pixel (" << row << ","
            << col << ")\n";
  auto bg = wsci::attribution_background(chips, a.seed, a.background_sample);
  auto rep = wsci::spatial_influence(ckpt.model, *chip, bg, row, col,
                                     a.patch_radius, a.workers);
  json out = rep.to_json();
  out["channel_importance"] =
      wsci::channel_importance(ckpt.model, *chip, bg, row, col);
  out["chip_id"] = a.chip_id;
  out["model_hash"] = wsci::model_hash(ckpt.model);
  wsci::write_file_atomic(a.out, out.dump(2) + "\n");
  mf.output(a.out);
  mf.write(a.out + ".manifest.json");
  emit({{"command", "attribute"},
        {"chip_id", a.chip_id},
        {"base_prediction", rep.base_prediction},
        {"out", a.out}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-supervised SAR fusion pipeline: synthetic worlds, "
               "footprint gridding, chip sampling, uncertainty-aware training, "
               "shifted-window ensemble inference, validation, and occlusion "
               "attribution."};
  app.require_subcommand(1);

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic world: SAR stack, dense truth, sparse target, footprints");
  synth->add_option("--seed", sy.seed, "World seed; all randomness derives from it");
  synth->add_option("--extent", sy.extent, "Cells per side at 25 m resolution");
  synth->add_option("--density", sy.density, "Footprints per km^2 per quarter");
  synth->add_option("--wavelength", sy.wavelength, "Base noise wavelength in cells");
  synth->add_option("--noise", sy.noise, "SAR additive noise level");
  synth->add_option("--quarter", sy.quarter, "Quarter index (year*4 + q)");
  synth->add_option("--out", sy.out, "Output directory")->required();

  GridArgs gr;
  auto* grid = app.add_subcommand("grid", "Average footprints into a sparse 25 m target raster");
  grid->add_option("--footprints", gr.footprints, "Footprint CSV (lon,lat,quarter,wsci)")->required();
  grid->add_option("--quarter", gr.quarter, "Quarter to select");
  grid->add_option("--width", gr.width, "Raster width in cells");
  grid->add_option("--height", gr.height, "Raster height in cells");
  grid->add_option("--origin-x", gr.origin_x, "Raster origin x in meters");
  grid->add_option("--origin-y", gr.origin_y, "Raster origin y in meters");
  grid->add_option("--out", gr.out, "Output raster path")->required();

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Extract 40x40 chips from a SAR stack and sparse target raster");
  sample->add_option("--sar", sa.sar, "7-band SAR raster path")->required();
  sample->add_option("--target", sa.target, "Sparse target raster path")->required();
  sample->add_option("--quarter", sa.quarter, "Quarter tag stored on each chip");
  sample->add_option("--seed", sa.seed, "Reservoir-sampling seed");
  sample->add_option("--split", sa.split, "Which block-split side to keep: all|train|test");
  sample->add_option("--split-seed", sa.split_seed, "Block-split hash seed");
  sample->add_option("--test-fraction", sa.test_fraction, "Fraction of blocks held out");
  sample->add_option("--out", sa.out, "Output chip file (.wscf)")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model on a chip file with the masked-likelihood objective");
  train->add_option("--chips", tr.chips, "Training chip file (.wscf)")->required();
  train->add_option("--config", tr.config_path, "JSON training config; flags below override it");
  train->add_option("--arch", tr.arch, "Architecture preset: default|reduced");
  train->add_option("--epochs", tr.epochs, "Override: number of epochs");
  train->add_option("--batch-size", tr.batch_size, "Override: chips per batch");
  train->add_option("--lr", tr.lr, "Override: initial learning rate");
  train->add_option("--grad-clip", tr.grad_clip, "Override: global gradient-norm clip (0 disables)");
  train->add_option("--seed", tr.seed, "Override: training seed");
  train->add_option("--history", tr.history, "Optional per-epoch loss CSV path");
  train->add_option("--out", tr.out, "Output checkpoint (.wscm)")->required();

  TransferArgs tf;
  auto* transfer = app.add_subcommand("transfer", "Adapt a trained checkpoint to new chips (full or frozen_head)");
  transfer->add_option("--base", tf.base, "Base checkpoint (.wscm)")->required();
  transfer->add_option("--chips", tf.chips, "Adaptation chip file (.wscf)")->required();
  transfer->add_option("--mode", tf.mode, "full | frozen_head (head-only retraining)");
  transfer->add_option("--config", tf.config_path, "JSON training config; flags override it");
  transfer->add_option("--epochs", tf.epochs, "Override: number of epochs");
  transfer->add_option("--batch-size", tf.batch_size, "Override: chips per batch");
  transfer->add_option("--lr", tf.lr, "Override: initial learning rate");
  transfer->add_option("--seed", tf.seed, "Override: training seed");
  transfer->add_option("--history", tf.history, "Optional per-epoch loss CSV path");
  transfer->add_option("--out", tf.out, "Output checkpoint (.wscm)")->required();

  InferArgs in;
  auto* infer = app.add_subcommand("infer", "Predict a 4-band mosaic (mean + three sigmas) over a SAR raster");
  infer->add_option("--model", in.model, "Checkpoint (.wscm)")->required();
  infer->add_option("--sar", in.sar, "7-band SAR raster path")->required();
  infer->add_option("--tile-size", in.tile_size, "Tile side length in pixels");
  infer->add_option("--workers", in.workers, "Parallel tile workers (output is worker-invariant)");
  infer->add_option("--passes", in.passes, "Stochastic passes per window offset");
  infer->add_option("--offsets", in.offsets, "Number of shifted window offsets (1-5)");
  infer->add_option("--quarter", in.quarter, "Quarter tag for tile jobs");
  infer->add_option("--seed", in.seed, "Ensemble seed");
  infer->add_option("--out", in.out, "Output mosaic raster path")->required();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a model on held-out chips and/or a mosaic against dense truth");
  evaluate->add_option("--model", ev.model, "Checkpoint (.wscm), required for --chips mode");
  evaluate->add_option("--chips", ev.chips, "Held-out chip file for sparse validation");
  evaluate->add_option("--mosaic", ev.mosaic, "Predicted mosaic raster for dense validation");
  evaluate->add_option("--truth", ev.truth, "Dense truth raster");
  evaluate->add_option("--target", ev.target, "Sparse target raster (separates observed from gap-filled)");
  evaluate->add_option("--passes", ev.passes, "Stochastic passes per chip");
  evaluate->add_option("--seed", ev.seed, "Ensemble seed");
  evaluate->add_option("--bin-edges", ev.bin_edges, "Calibration bin edges over observed values");
  evaluate->add_option("--report", ev.report, "Output JSON report path")->required();

  AttributeArgs at;
  auto* attribute = app.add_subcommand("attribute", "Occlusion attribution for one output pixel of one chip");
  attribute->add_option("--model", at.model, "Checkpoint (.wscm)")->required();
  attribute->add_option("--chips", at.chips, "Chip file providing the chip and the background sample")->required();
  attribute->add_option("--chip-id", at.chip_id, "Chip id within the file");
  attribute->add_option("--pixel", at.pixel, "Target output pixel as r,c (0-31)");
  attribute->add_option("--patch-radius", at.patch_radius, "Occlusion patch radius in pixels");
  attribute->add_option("--workers", at.workers, "Parallel row workers (output is worker-invariant)");
  attribute->add_option("--background-sample", at.background_sample, "Chips averaged into the background");
  attribute->add_option("--seed", at.seed, "Background sampling seed");
  attribute->add_option("--out", at.out, "Output JSON report path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // help/version exit 0; any parse failure is usage
  }

  try {
    if (*synth) return run_synth(sy);
    if (*grid) return run_grid(gr);
    if (*sample) return run_sample(sa);
    if (*train) return run_train(tr);
    if (*transfer) return run_transfer(tf);
    if (*infer) return run_infer(in);
    if (*evaluate) return run_evaluate(ev);
    if (*attribute) return run_attribute(at);
  } catch (const usage_error& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  } catch (const wsci::error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[runtime]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
