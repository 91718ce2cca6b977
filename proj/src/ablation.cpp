#include "cdstraj/ablation.hpp"

#include "cdstraj/errors.hpp"

namespace cdstraj {

AblationResult run_ablation(const DatasetSplit& data, const TrainConfig& base, const AblationSpec& spec,
                            const TrainOptions& options) {
  if (base.model.ablation != Ablation::None && base.model.ablation != spec.disabled) {
    throw ConfigError("base config already disables " + std::string(to_string(base.model.ablation)) +
                      "; only one component may be disabled per run");
  }
  if (data.val.empty()) throw ConfigError("ablation needs a non-empty validation split");
  if (spec.eval_k == 0) throw ConfigError("ablation eval K must be positive");
  TrainConfig config = base;
  config.model.ablation = spec.disabled;

  AblationResult result;
  result.training = train(data, config, options);
  result.report =
      evaluate(data.val, result.training.params, config.model, spec.eval_k, config.seed, std::string(to_string(spec.disabled)))
          .report;
  return result;
}

}  // namespace cdstraj
