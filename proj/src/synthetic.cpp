#include <algorithm>
#include <cmath>
#include <functional>

#include "cdstraj/data.hpp"
#include "cdstraj/errors.hpp"
#include "cdstraj/rng.hpp"

namespace cdstraj {

SyntheticKind parse_synthetic_kind(std::string_view s) {
  if (s == "constant_velocity") return SyntheticKind::ConstantVelocity;
  if (s == "lane_change") return SyntheticKind::LaneChange;
  if (s == "braking_interaction") return SyntheticKind::BrakingInteraction;
  throw ConfigError("unknown synthetic kind '" + std::string(s) + "'");
}

std::string_view to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::ConstantVelocity:
      return "constant_velocity";
    case SyntheticKind::LaneChange:
      return "lane_change";
    case SyntheticKind::BrakingInteraction:
      return "braking_interaction";
  }
  return "unknown";
}

namespace {

constexpr double kLaneWidth = 3.5;

using Path = std::vector<std::array<double, 2>>;  // 41 absolute positions

Path constant_velocity_path(double x0, double y0, double speed) {
  Path p(kWindowSteps);
  for (std::size_t k = 0; k < kWindowSteps; ++k) p[k] = {x0 + speed * kStepSeconds * static_cast<double>(k), y0};
  return p;
}

/// Longitudinal motion with constant deceleration from `onset` seconds,
/// never dropping below `floor_speed`. Integrated exactly per step.
Path braking_path(double x0, double y0, double speed, double onset, double decel, double floor_speed) {
  Path p(kWindowSteps);
  auto position = [&](double t) {
    if (t <= onset) return x0 + speed * t;
    const double t_floor = onset + std::max(0.0, (speed - floor_speed) / decel);
    const double x_onset = x0 + speed * onset;
    if (t <= t_floor) {
      const double tau = t - onset;
      return x_onset + speed * tau - 0.5 * decel * tau * tau;
    }
    const double tau = t_floor - onset;
    return x_onset + speed * tau - 0.5 * decel * tau * tau + floor_speed * (t - t_floor);
  };
  for (std::size_t k = 0; k < kWindowSteps; ++k) p[k] = {position(kStepSeconds * static_cast<double>(k)), y0};
  return p;
}

/// Adds 0-2 independent constant-velocity vehicles in adjacent lanes.
void add_adjacent_traffic(Rng& rng, const Path& target, std::vector<Path>& neighbors, std::size_t max_count) {
  const auto count = static_cast<std::size_t>(rng.uniform_int(0, 2));
  for (std::size_t i = 0; i < std::min(count, max_count); ++i) {
    const double lane = (i % 2 == 0) ? kLaneWidth : -kLaneWidth;
    const double speed = rng.uniform(5.0, 30.0);
    // place it so it is 0-20 m from the target at the last observed step
    const double offset = rng.uniform(-20.0, 20.0);
    const double now_x = target[kHistorySteps - 1][0] + offset;
    const double x0 = now_x - speed * kStepSeconds * static_cast<double>(kHistorySteps - 1);
    neighbors.push_back(constant_velocity_path(x0, target[0][1] + lane, speed));
  }
}

Scene assemble(const Path& target, const std::vector<Path>& neighbors, std::size_t n_max, double sigma, Rng& rng,
               std::string id) {
  auto noisy = [&](const Path& p) {
    Path q = p;
    if (sigma > 0.0) {
      for (auto& pt : q) {
        pt[0] += sigma * rng.normal();
        pt[1] += sigma * rng.normal();
      }
    }
    return q;
  };
  const Path t = noisy(target);
  std::vector<Path> ns;
  for (const auto& n : neighbors) ns.push_back(noisy(n));
  const auto origin = t[kHistorySteps - 1];

  // nearest first at the last observed step, same rule as build_scenes
  std::vector<std::size_t> order(ns.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto dist = [&](std::size_t i) {
    return std::hypot(ns[i][kHistorySteps - 1][0] - origin[0], ns[i][kHistorySteps - 1][1] - origin[1]);
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });

  Scene s = make_empty_scene(n_max);
  s.scene_id = std::move(id);
  s.origin = origin;
  for (std::size_t k = 0; k < kWindowSteps; ++k) {
    Tensor& dst = k < kHistorySteps ? s.target_history : s.target_future;
    const std::size_t r = k < kHistorySteps ? k : k - kHistorySteps;
    dst.at(r, 0) = t[k][0] - origin[0];
    dst.at(r, 1) = t[k][1] - origin[1];
  }
  // the last observed point is the origin by construction; pin it exactly
  s.target_history.at(kHistorySteps - 1, 0) = 0.0;
  s.target_history.at(kHistorySteps - 1, 1) = 0.0;
  for (std::size_t slot = 0; slot < std::min(order.size(), n_max); ++slot) {
    const Path& p = ns[order[slot]];
    s.neighbor_mask[slot] = true;
    for (std::size_t k = 0; k < kWindowSteps; ++k) {
      Tensor& dst = k < kHistorySteps ? s.neighbor_histories : s.neighbor_futures;
      const std::size_t r = k < kHistorySteps ? k : k - kHistorySteps;
      dst.at(slot, r, 0) = p[k][0] - origin[0];
      dst.at(slot, r, 1) = p[k][1] - origin[1];
    }
  }
  return s;
}

}  // namespace

std::vector<Scene> gen_synthetic(SyntheticKind kind, std::size_t count, std::uint64_t seed,
                                 const SyntheticOptions& options) {
  if (count == 0) throw ConfigError("synthetic scene count must be at least 1");
  if (options.n_max == 0) throw ConfigError("n_max must be at least 1");
  if (options.noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  Rng rng(seed);
  std::vector<Scene> scenes;
  scenes.reserve(count);
  const std::string prefix(to_string(kind));

  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = prefix + ":" + std::to_string(seed) + ":" + std::to_string(i);
    const double x0 = rng.uniform(0.0, 100.0);
    const double lane_y = kLaneWidth * static_cast<double>(rng.uniform_int(0, 3));
    Path target;
    std::vector<Path> neighbors;

    switch (kind) {
      case SyntheticKind::ConstantVelocity: {
        const double speed = rng.uniform(5.0, 30.0);
        target = constant_velocity_path(x0, lane_y, speed);
        add_adjacent_traffic(rng, target, neighbors, options.n_max);
        break;
      }
      case SyntheticKind::LaneChange: {
        const double speed = rng.uniform(10.0, 30.0);
        const double centre = rng.uniform(2.0, 6.0);  // seconds into the window
        const double width = rng.uniform(0.4, 0.8);   // seconds
        const double dir = rng.uniform() < 0.5 ? -1.0 : 1.0;
        target = constant_velocity_path(x0, lane_y, speed);
        for (std::size_t k = 0; k < kWindowSteps; ++k) {
          const double t = kStepSeconds * static_cast<double>(k);
          target[k][1] += dir * kLaneWidth / (1.0 + std::exp(-(t - centre) / width));
        }
        add_adjacent_traffic(rng, target, neighbors, options.n_max);
        break;
      }
      case SyntheticKind::BrakingInteraction: {
        // The leader (same lane, ahead) may brake at 3 m/s^2 late in the
        // observed window; the follower reacts one second later. Whether and
        // when the follower slows down is visible mostly in the leader's
        // history, not in the follower's own.
        const double speed = rng.uniform(15.0, 25.0);
        const double gap = rng.uniform(15.0, 25.0);
        const bool brakes = rng.uniform() < 0.6;
        const double onset = rng.uniform(1.0, 2.4);
        const double reaction = 1.0;
        const double never = 1e9;
        target = braking_path(x0, lane_y, speed, brakes ? onset + reaction : never, 3.5, 2.0);
        neighbors.push_back(braking_path(x0 + gap, lane_y, speed, brakes ? onset : never, 3.0, 3.0));
        if (options.n_max > 1) add_adjacent_traffic(rng, target, neighbors, options.n_max - 1);
        break;
      }
    }
    scenes.push_back(assemble(target, neighbors, options.n_max, options.noise_sigma, rng, id));
  }
  return scenes;
}

}  // namespace cdstraj
