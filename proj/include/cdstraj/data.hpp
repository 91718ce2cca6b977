#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cdstraj/tensor.hpp"

namespace cdstraj {

inline constexpr std::size_t kHistorySteps = 16;
inline constexpr std::size_t kFutureSteps = 25;
inline constexpr std::size_t kWindowSteps = kHistorySteps + kFutureSteps;
/// 5 Hz cadence.
inline constexpr double kStepSeconds = 0.2;
inline constexpr double kFeetToMeters = 0.3048;

struct TrackPoint {
  std::int64_t frame = 0;
  double x = 0.0;  // meters
  double y = 0.0;  // meters
};

struct Trajectory {
  std::int64_t agent_id = 0;
  std::vector<TrackPoint> points;  // ordered by frame
};

/// One prediction instance, translated so the target's last observed
/// position sits at the origin.
struct Scene {
  std::string scene_id;
  std::array<double, 2> origin{0.0, 0.0};
  Tensor target_history;      // 16 x 2
  Tensor neighbor_histories;  // n_max x 16 x 2
  std::vector<bool> neighbor_mask;
  Tensor target_future;       // 25 x 2
  Tensor neighbor_futures;    // n_max x 25 x 2

  std::size_t n_max() const { return neighbor_mask.size(); }
  std::size_t neighbor_count() const;
};

/// Zero-initialised scene with the right tensor shapes.
Scene make_empty_scene(std::size_t n_max);
/// Throws ContractError when shapes, masking, or normalisation are off.
void validate_scene(const Scene& scene);

enum class Units { Feet, Meters };

struct CsvSchema {
  Units units = Units::Feet;
  std::string vehicle_column = "Vehicle_ID";
  std::string frame_column = "Frame_ID";
  std::string x_column = "Local_X";
  std::string y_column = "Local_Y";
};

Units parse_units(std::string_view s);

/// Reads an NGSIM-style CSV (header required). Rows of each vehicle must
/// appear in strictly increasing frame order.
std::vector<Trajectory> ingest_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

/// Decimates a 10 Hz trajectory to 5 Hz. Frames with (frame - phase) even are
/// kept and renumbered (frame - phase) / 2. The single-argument form uses the
/// trajectory's first frame as phase, so output frames start at 0.
Trajectory resample_5hz(const Trajectory& traj);
Trajectory resample_5hz(const Trajectory& traj, std::int64_t phase);

/// Resamples a whole recording on one shared clock (phase = earliest frame)
/// so agents stay time-aligned.
std::vector<Trajectory> resample_all_5hz(const std::vector<Trajectory>& trajs);

struct SceneBuildOptions {
  double radius_m = 30.0;
  std::size_t n_max = 8;
  /// Window start advance in 5 Hz steps.
  std::size_t stride = 1;
  std::string id_prefix = "scene";
};

struct SceneBuildResult {
  std::vector<Scene> scenes;
  /// Agents with fewer than 41 contiguous steps.
  std::size_t skipped_agents = 0;
};

SceneBuildResult build_scenes(const std::vector<Trajectory>& trajs, const SceneBuildOptions& options = {});

enum class SyntheticKind { ConstantVelocity, LaneChange, BrakingInteraction };

SyntheticKind parse_synthetic_kind(std::string_view s);
std::string_view to_string(SyntheticKind kind);

struct SyntheticOptions {
  std::size_t n_max = 8;
  double noise_sigma = 0.05;
};

std::vector<Scene> gen_synthetic(SyntheticKind kind, std::size_t count, std::uint64_t seed,
                                 const SyntheticOptions& options = {});

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<Scene> test;
  std::uint64_t seed = 0;
};

/// Seeded shuffle, then val/test sizes are floor(n * fraction) and the
/// remainder goes to train.
DatasetSplit split_dataset(const std::vector<Scene>& scenes, const SplitFractions& fractions, std::uint64_t seed);

/// Newline-delimited JSON, one scene per line.
void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::filesystem::path& path);
std::string scene_to_json_line(const Scene& scene);
Scene scene_from_json_line(const std::string& line);

}  // namespace cdstraj
