#include "cdstraj/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdstraj/ablation.hpp"
#include "cdstraj/data.hpp"
#include "cdstraj/decoder.hpp"
#include "cdstraj/errors.hpp"
#include "cdstraj/metrics.hpp"
#include "cdstraj/rng.hpp"
#include "cdstraj/trainer.hpp"

namespace cdstraj {
namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

/// Usage problems detected after parsing (e.g. a checkpoint path that does
/// not exist).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CDSTRAJ_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("CDSTRAJ_SEED is not an unsigned integer: ") + s);
  }
}

TrainConfig config_or_tiny(const std::string& path) {
  TrainConfig c = path.empty() ? tiny_train_config() : load_train_config(path);
  if (auto s = env_seed()) c.seed = *s;
  return c;
}

CsvSchema load_schema(const std::string& path) {
  CsvSchema schema;
  if (path.empty()) return schema;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    schema.vehicle_column = j.value("vehicle", schema.vehicle_column);
    schema.frame_column = j.value("frame", schema.frame_column);
    schema.x_column = j.value("x", schema.x_column);
    schema.y_column = j.value("y", schema.y_column);
    if (j.contains("units")) schema.units = parse_units(j["units"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad schema " + path + ": " + e.what());
  }
  return schema;
}

std::vector<Scene> select_split(const std::vector<Scene>& scenes, const std::string& which, const TrainConfig& c) {
  if (which == "all") return scenes;
  DatasetSplit s = split_dataset(scenes, c.split, c.seed);
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  throw UsageError("unknown split '" + which + "' (expected all|train|val|test)");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

void print_report(const MetricsReport& r) { std::cout << report_csv(r); }

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Multi-agent vehicle trajectory prediction with diffusion-simulated neighbor futures", "cdstraj"};
  app.require_subcommand(1);

  // gen-synthetic
  std::string kind = "constant_velocity", out;
  std::size_t count = 100, n_max = 8;
  std::uint64_t seed = 0;
  double noise = 0.05;
  auto* gen = app.add_subcommand("gen-synthetic", "Generate seeded synthetic scenes as NDJSON");
  gen->add_option("--kind", kind, "constant_velocity | lane_change | braking_interaction")->capture_default_str();
  gen->add_option("--count", count)->capture_default_str();
  gen->add_option("--seed", seed)->capture_default_str();
  gen->add_option("--n-max", n_max)->capture_default_str();
  gen->add_option("--noise", noise, "position noise sigma (m)")->capture_default_str();
  gen->add_option("--out", out)->required();

  // ingest
  std::string csv, schema_path, units, prefix = "scene";
  double radius = 30.0;
  std::size_t stride = 1;
  auto* ingest = app.add_subcommand("ingest", "Convert a 10 Hz trajectory CSV into 5 Hz scenes");
  ingest->add_option("--csv", csv)->required()->check(CLI::ExistingFile);
  ingest->add_option("--schema", schema_path, "JSON with vehicle, frame, x, y, units")->check(CLI::ExistingFile);
  ingest->add_option("--units", units, "feet | meters (overrides the schema)");
  ingest->add_option("--radius", radius)->capture_default_str();
  ingest->add_option("--n-max", n_max)->capture_default_str();
  ingest->add_option("--stride", stride)->capture_default_str();
  ingest->add_option("--prefix", prefix)->capture_default_str();
  ingest->add_option("--out", out)->required();

  // train
  std::string config_path, data_path, log_path, resume;
  std::optional<std::size_t> stop_after;
  bool verbose = false;
  auto* train_cmd = app.add_subcommand("train", "Two-stage training");
  train_cmd->add_option("--config", config_path, "JSON config (default: tiny)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data_path, "scenes NDJSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out, "checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "metrics CSV (default: <out>.log.csv)");
  train_cmd->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--stop-after", stop_after, "stop after this many completed epochs");
  train_cmd->add_flag("-v,--verbose", verbose);

  // eval
  std::string checkpoint, report_out, plot_out, split = "all";
  std::size_t k = 1;
  std::optional<std::uint64_t> eval_seed;
  auto* eval = app.add_subcommand("eval", "Per-horizon RMSE report for a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--report-out", report_out, "CSV report")->required();
  eval->add_option("--plot-out", plot_out, "SVG plot (default: report path with .svg)");
  eval->add_option("--split", split, "all | train | val | test")->capture_default_str();
  eval->add_option("--k", k, "samples per scene")->capture_default_str();
  eval->add_option("--seed", eval_seed, "sampling seed (default: checkpoint seed)");

  // predict
  std::string scenes_path;
  auto* pred = app.add_subcommand("predict", "Write K predicted trajectories per scene as NDJSON");
  pred->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  pred->add_option("--scenes", scenes_path)->required()->check(CLI::ExistingFile);
  pred->add_option("--k", k)->capture_default_str();
  pred->add_option("--seed", seed)->capture_default_str();
  pred->add_option("--out", out)->required();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full training objective");
  grad->add_option("--config", config_path, "JSON config (default: tiny)")->check(CLI::ExistingFile);
  grad->add_option("--seed", seed)->capture_default_str();

  // ablate
  std::string spec = "none";
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate with one component stubbed out");
  ablate->add_option("--config", config_path, "JSON config (default: tiny)")->check(CLI::ExistingFile);
  ablate->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  ablate->add_option("--spec", spec, "none | diffusion | temporal | spatial | fusion | decoder")->capture_default_str();
  ablate->add_option("--report-out", report_out);
  ablate->add_option("--k", k)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::All);
    return kExitUsage;
  }

  try {
    if (*gen) {
      SyntheticOptions opts;
      opts.n_max = n_max;
      opts.noise_sigma = noise;
      const auto scenes = gen_synthetic(parse_synthetic_kind(kind), count, seed, opts);
      write_scenes(out, scenes);
      std::cout << "wrote " << scenes.size() << " scenes to " << out << '\n';
    } else if (*ingest) {
      CsvSchema schema = load_schema(schema_path);
      if (!units.empty()) schema.units = parse_units(units);
      SceneBuildOptions opts;
      opts.radius_m = radius;
      opts.n_max = n_max;
      opts.stride = stride;
      opts.id_prefix = prefix;
      const auto result = build_scenes(resample_all_5hz(ingest_csv(csv, schema)), opts);
      write_scenes(out, result.scenes);
      std::cout << "wrote " << result.scenes.size() << " scenes to " << out << " (" << result.skipped_agents
                << " agents too short)\n";
    } else if (*train_cmd) {
      const TrainConfig config = config_or_tiny(config_path);
      const DatasetSplit data = split_dataset(read_scenes(data_path), config.split, config.seed);
      TrainOptions opts;
      opts.checkpoint_path = out;
      opts.log_path = log_path.empty() ? out + ".log.csv" : log_path;
      if (!resume.empty()) opts.resume_from = resume;
      opts.stop_after_epoch = stop_after;
      opts.verbose = verbose;
      const TrainResult r = train(data, config, opts);
      std::cout << "trained " << r.log.size() << " epochs; best epoch " << r.best_epoch << "; checkpoint " << out
                << '\n';
    } else if (*eval) {
      const Checkpoint ckpt = load_checkpoint(checkpoint);
      const auto scenes = select_split(read_scenes(data_path), split, ckpt.config);
      if (scenes.empty()) throw DataError("no scenes to evaluate in split '" + split + "'");
      const Evaluation ev = evaluate(scenes, ckpt.params, ckpt.config.model, k, eval_seed.value_or(ckpt.config.seed),
                                     std::filesystem::path(checkpoint).filename().string());
      write_report_csv(report_out, ev.report);
      std::string svg_path = plot_out;
      if (svg_path.empty()) svg_path = std::filesystem::path(report_out).replace_extension(".svg").string();
      write_text(svg_path, report_svg(ev.report));
      print_report(ev.report);
    } else if (*pred) {
      const Checkpoint ckpt = load_checkpoint(checkpoint);
      const auto scenes = read_scenes(scenes_path);
      std::ofstream o(out, std::ios::binary);
      if (!o) throw DataError("cannot write " + out);
      for (std::size_t i = 0; i < scenes.size(); ++i) {
        for (const auto& p : predict(scenes[i], ckpt.params, ckpt.config.model, k, derive_seed(seed, i))) {
          o << prediction_to_json_line(p) << '\n';
        }
      }
      std::cout << "wrote " << scenes.size() * k << " predictions to " << out << '\n';
    } else if (*grad) {
      const TrainConfig config = config_or_tiny(config_path);
      const PipelineGradcheck r = pipeline_gradcheck(config, seed);
      auto line = [](const char* term, double loss, const GradcheckResult& g) {
        std::cout << term << ": loss " << loss << ", " << g.checked << " entries, worst relative error "
                  << g.max_rel_error << " at " << g.worst_param << "[" << g.worst_index << "] (analytic "
                  << g.analytic << ", numeric " << g.numeric << ")\n";
      };
      line("mse", r.loss_mse, r.mse);
      line("nll", r.loss_nll, r.nll);
      line("diffusion", r.loss_diffusion, r.diffusion);
      return r.worst().max_rel_error < 1e-4 ? 0 : kExitData;
    } else if (*ablate) {
      const TrainConfig config = config_or_tiny(config_path);
      const DatasetSplit data = split_dataset(read_scenes(data_path), config.split, config.seed);
      const AblationResult r = run_ablation(data, config, AblationSpec{parse_ablation(spec), k});
      if (!report_out.empty()) write_report_csv(report_out, r.report);
      print_report(r.report);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::All);
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}

}  // namespace cdstraj
