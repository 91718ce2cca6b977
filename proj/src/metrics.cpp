#include "cdstraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "cdstraj/errors.hpp"
#include "cdstraj/losses.hpp"
#include "cdstraj/rng.hpp"

namespace cdstraj {

namespace {

double sq_error_at(const PredictedTrajectory& p, const Scene& s, std::size_t step) {
  if (p.steps.size() != kFutureSteps) {
    throw ContractError("prediction for scene " + s.scene_id + " does not have 25 steps");
  }
  const double dx = p.steps[step].mu_x - s.target_future.at(step, 0);
  const double dy = p.steps[step].mu_y - s.target_future.at(step, 1);
  return dx * dx + dy * dy;
}

}  // namespace

MetricsReport rmse_per_horizon(const std::vector<std::vector<PredictedTrajectory>>& predictions,
                               const std::vector<Scene>& scenes, std::string model_tag) {
  if (scenes.empty()) throw ContractError("rmse_per_horizon needs at least one scene");
  std::unordered_map<std::string, const std::vector<PredictedTrajectory>*> by_id;
  for (const auto& samples : predictions) {
    if (!samples.empty()) by_id.emplace(samples.front().scene_id, &samples);
  }
  MetricsReport r;
  r.model_tag = std::move(model_tag);
  r.scene_count = scenes.size();
  std::array<double, kHorizons> first{}, best{};
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    const std::vector<PredictedTrajectory>* samples = nullptr;
    if (auto it = by_id.find(s.scene_id); it != by_id.end()) {
      samples = it->second;
    } else if (i < predictions.size() && !predictions[i].empty() && predictions[i].front().scene_id.empty()) {
      samples = &predictions[i];  // unlabeled predictions matched by position
    }
    if (!samples) throw ContractError("missing predictions for scene " + s.scene_id);

    std::size_t best_k = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < samples->size(); ++k) {
      const double e = sq_error_at((*samples)[k], s, kFutureSteps - 1);
      if (e < best_err) {
        best_err = e;
        best_k = k;
      }
    }
    for (std::size_t h = 0; h < kHorizons; ++h) {
      const std::size_t step = 5 * (h + 1) - 1;
      first[h] += sq_error_at(samples->front(), s, step);
      best[h] += sq_error_at((*samples)[best_k], s, step);
    }
  }
  const double n = static_cast<double>(scenes.size());
  for (std::size_t h = 0; h < kHorizons; ++h) {
    r.rmse_per_second[h] = std::sqrt(first[h] / n);
    r.min_over_k[h] = std::sqrt(best[h] / n);
  }
  return r;
}

Evaluation evaluate(const std::vector<Scene>& scenes, const ParamStore& params, const ModelConfig& config,
                    std::size_t k, std::uint64_t seed, std::string model_tag) {
  Evaluation ev;
  ev.predictions.reserve(scenes.size());
  double nll = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    ev.predictions.push_back(predict(scenes[i], params, config, k, derive_seed(seed, i)));
    nll += nll_loss(ev.predictions.back().front(), scenes[i].target_future);
  }
  ev.mean_nll = scenes.empty() ? 0.0 : nll / static_cast<double>(scenes.size());
  ev.report = rmse_per_horizon(ev.predictions, scenes, std::move(model_tag));
  return ev;
}

std::string report_csv(const MetricsReport& r) {
  std::string out = "horizon_s,rmse_m,min_over_k_rmse_m\n";
  char buf[96];
  for (std::size_t h = 0; h < kHorizons; ++h) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", h + 1, r.rmse_per_second[h], r.min_over_k[h]);
    out += buf;
  }
  return out;
}

void write_report_csv(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << report_csv(report);
}

std::string report_svg(const MetricsReport& r) {
  const double w = 480, h = 320, left = 60, right = 20, top = 30, bottom = 50;
  double ymax = 0.0;
  for (std::size_t i = 0; i < kHorizons; ++i) ymax = std::max({ymax, r.rmse_per_second[i], r.min_over_k[i]});
  if (!(ymax > 0.0)) ymax = 1.0;
  ymax *= 1.1;
  auto px = [&](std::size_t i) { return left + (w - left - right) * static_cast<double>(i) / (kHorizons - 1); };
  auto py = [&](double v) { return top + (h - top - bottom) * (1.0 - v / ymax); };
  auto polyline = [&](const std::array<double, kHorizons>& v, const char* colour, const char* dash) {
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"" << dash << " points=\"";
    for (std::size_t i = 0; i < kHorizons; ++i) os << px(i) << ',' << py(v[i]) << ' ';
    os << "\"/>\n";
    return os.str();
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">RMSE vs horizon"
     << (r.model_tag.empty() ? "" : " (" + r.model_tag + ")") << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
     << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < kHorizons; ++i) {
    os << "<text x=\"" << px(i) << "\" y=\"" << h - bottom + 18 << "\" text-anchor=\"middle\" font-size=\"12\">"
       << i + 1 << " s</text>\n";
  }
  char buf[32];
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0;
    std::snprintf(buf, sizeof buf, "%.2f", v);
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << buf
       << "</text>\n";
  }
  os << polyline(r.rmse_per_second, "#1f77b4", "");
  os << polyline(r.min_over_k, "#ff7f0e", " stroke-dasharray=\"5,4\"");
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << "solid: RMSE (m), dashed: min over K</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace cdstraj
