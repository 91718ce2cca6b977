#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdstraj/data.hpp"
#include "cdstraj/decoder.hpp"
#include "cdstraj/model.hpp"

namespace cdstraj {

inline constexpr std::size_t kHorizons = 5;

/// Per-horizon RMSE (meters) at 1..5 s, i.e. future steps 5, 10, 15, 20, 25.
struct MetricsReport {
  std::array<double, kHorizons> rmse_per_second{};
  std::array<double, kHorizons> min_over_k{};
  std::size_t scene_count = 0;
  std::string model_tag;
};

/// `predictions[i]` holds the K samples for `scenes[i]` (matched by
/// sceneId). The headline RMSE uses sample 0; min-over-K picks, per scene,
/// the sample with the lowest 5 s error and reports it at every horizon.
MetricsReport rmse_per_horizon(const std::vector<std::vector<PredictedTrajectory>>& predictions,
                               const std::vector<Scene>& scenes, std::string model_tag = {});

struct Evaluation {
  MetricsReport report;
  std::vector<std::vector<PredictedTrajectory>> predictions;
  /// Mean per-scene NLL of sample 0.
  double mean_nll = 0.0;
};

/// Runs predict on every scene (scene i uses seed derive_seed(seed, i)) and
/// scores the result.
Evaluation evaluate(const std::vector<Scene>& scenes, const ParamStore& params, const ModelConfig& config,
                    std::size_t k, std::uint64_t seed, std::string model_tag = {});

/// CSV with header horizon_s,rmse_m,min_over_k_rmse_m and one row per second.
std::string report_csv(const MetricsReport& report);
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);
/// SVG line chart of RMSE (and min-over-K) against horizon.
std::string report_svg(const MetricsReport& report);

}  // namespace cdstraj
