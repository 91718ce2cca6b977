#pragma once

#include "cdstraj/data.hpp"
#include "cdstraj/metrics.hpp"
#include "cdstraj/model.hpp"
#include "cdstraj/trainer.hpp"

namespace cdstraj {

/// Which single component to replace by its neutral stub (None is the full
/// model).
struct AblationSpec {
  Ablation disabled = Ablation::None;
  std::size_t eval_k = 1;
};

struct AblationResult {
  MetricsReport report;  // on the validation split
  TrainResult training;
};

/// Trains from scratch with the ablated model and scores the final
/// parameters on the validation split. Everything but the ablation flag is
/// taken from `base`.
AblationResult run_ablation(const DatasetSplit& data, const TrainConfig& base, const AblationSpec& spec,
                            const TrainOptions& options = {});

}  // namespace cdstraj
