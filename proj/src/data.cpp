#include "cdstraj/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "cdstraj/errors.hpp"
#include "cdstraj/rng.hpp"

namespace cdstraj {

std::size_t Scene::neighbor_count() const {
  return static_cast<std::size_t>(std::count(neighbor_mask.begin(), neighbor_mask.end(), true));
}

Scene make_empty_scene(std::size_t n_max) {
  if (n_max == 0) throw ConfigError("n_max must be at least 1");
  Scene s;
  s.target_history = Tensor::zeros({kHistorySteps, 2});
  s.neighbor_histories = Tensor::zeros({n_max, kHistorySteps, 2});
  s.neighbor_mask.assign(n_max, false);
  s.target_future = Tensor::zeros({kFutureSteps, 2});
  s.neighbor_futures = Tensor::zeros({n_max, kFutureSteps, 2});
  return s;
}

void validate_scene(const Scene& s) {
  const std::size_t n = s.n_max();
  auto bad = [&](const std::string& what) { throw ContractError("scene " + s.scene_id + ": " + what); };
  if (n == 0) bad("n_max must be positive");
  if (s.target_history.shape() != Shape{kHistorySteps, 2}) bad("target history shape " + shape_str(s.target_history.shape()));
  if (s.target_future.shape() != Shape{kFutureSteps, 2}) bad("target future shape " + shape_str(s.target_future.shape()));
  if (s.neighbor_histories.shape() != Shape{n, kHistorySteps, 2}) bad("neighbor history shape");
  if (s.neighbor_futures.shape() != Shape{n, kFutureSteps, 2}) bad("neighbor future shape");
  if (std::abs(s.target_history.at(kHistorySteps - 1, 0)) > 1e-9 ||
      std::abs(s.target_history.at(kHistorySteps - 1, 1)) > 1e-9) {
    bad("target last history point is not at the origin");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (s.neighbor_mask[i]) continue;
    for (std::size_t t = 0; t < kHistorySteps; ++t)
      for (std::size_t c = 0; c < 2; ++c)
        if (s.neighbor_histories.at(i, t, c) != 0.0) bad("masked neighbor slot has non-zero history");
    for (std::size_t t = 0; t < kFutureSteps; ++t)
      for (std::size_t c = 0; c < 2; ++c)
        if (s.neighbor_futures.at(i, t, c) != 0.0) bad("masked neighbor slot has non-zero future");
  }
  for (const Tensor* t : {&s.target_history, &s.target_future, &s.neighbor_histories, &s.neighbor_futures}) {
    if (!t->all_finite()) bad("non-finite coordinate");
  }
}

Units parse_units(std::string_view s) {
  if (s == "feet") return Units::Feet;
  if (s == "meters") return Units::Meters;
  throw ConfigError("units must be 'feet' or 'meters', got '" + std::string(s) + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& cell, const std::string& column, std::size_t line_no) {
  T v{};
  const auto* first = cell.data();
  const auto* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse " + column + " value '" + cell + "'");
  }
  return v;
}

}  // namespace

std::vector<Trajectory> ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file " + path.string());
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column " + name + " in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column(schema.vehicle_column);
  const std::size_t c_frame = column(schema.frame_column);
  const std::size_t c_x = column(schema.x_column);
  const std::size_t c_y = column(schema.y_column);
  const std::size_t needed = std::max({c_id, c_frame, c_x, c_y}) + 1;
  const double unit = schema.units == Units::Feet ? kFeetToMeters : 1.0;

  std::map<std::int64_t, Trajectory> by_id;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < needed) throw DataError("line " + std::to_string(line_no) + ": too few columns");
    const auto id = parse_number<std::int64_t>(cells[c_id], schema.vehicle_column, line_no);
    const auto frame = parse_number<std::int64_t>(cells[c_frame], schema.frame_column, line_no);
    const double x = parse_number<double>(cells[c_x], schema.x_column, line_no) * unit;
    const double y = parse_number<double>(cells[c_y], schema.y_column, line_no) * unit;
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw DataError("line " + std::to_string(line_no) + ": non-finite coordinate");
    }
    auto& traj = by_id[id];
    traj.agent_id = id;
    if (!traj.points.empty() && frame <= traj.points.back().frame) {
      throw DataError("vehicle " + std::to_string(id) + ": frames not strictly increasing at frame " +
                      std::to_string(frame));
    }
    traj.points.push_back({frame, x, y});
  }
  std::vector<Trajectory> out;
  out.reserve(by_id.size());
  for (auto& [_, t] : by_id) out.push_back(std::move(t));
  return out;
}

Trajectory resample_5hz(const Trajectory& traj) {
  if (traj.points.size() < 2) {
    throw DataError("vehicle " + std::to_string(traj.agent_id) + ": need at least 2 points to resample");
  }
  return resample_5hz(traj, traj.points.front().frame);
}

Trajectory resample_5hz(const Trajectory& traj, std::int64_t phase) {
  if (traj.points.size() < 2) {
    throw DataError("vehicle " + std::to_string(traj.agent_id) + ": need at least 2 points to resample");
  }
  for (std::size_t i = 1; i < traj.points.size(); ++i) {
    if (traj.points[i].frame != traj.points[i - 1].frame + 1) {
      throw DataError("vehicle " + std::to_string(traj.agent_id) + ": frames are not uniform 10 Hz near frame " +
                      std::to_string(traj.points[i].frame));
    }
  }
  Trajectory out;
  out.agent_id = traj.agent_id;
  for (const auto& p : traj.points) {
    const std::int64_t rel = p.frame - phase;
    if (rel < 0 || rel % 2 != 0) continue;
    out.points.push_back({rel / 2, p.x, p.y});
  }
  return out;
}

std::vector<Trajectory> resample_all_5hz(const std::vector<Trajectory>& trajs) {
  std::vector<Trajectory> out;
  if (trajs.empty()) return out;
  std::int64_t phase = trajs.front().points.empty() ? 0 : trajs.front().points.front().frame;
  for (const auto& t : trajs) {
    if (!t.points.empty()) phase = std::min(phase, t.points.front().frame);
  }
  for (const auto& t : trajs) {
    auto r = resample_5hz(t, phase);
    if (!r.points.empty()) out.push_back(std::move(r));
  }
  return out;
}

SceneBuildResult build_scenes(const std::vector<Trajectory>& trajs, const SceneBuildOptions& options) {
  if (options.n_max == 0) throw ConfigError("n_max must be at least 1");
  if (options.stride == 0) throw ConfigError("window stride must be at least 1");
  SceneBuildResult result;

  // Position of an agent at a frame, or nullptr when absent. Trajectories are
  // unit-stride after resampling, so a frame maps to an index directly.
  auto point_at = [](const Trajectory& t, std::int64_t frame) -> const TrackPoint* {
    if (t.points.empty()) return nullptr;
    const std::int64_t idx = frame - t.points.front().frame;
    if (idx < 0 || idx >= static_cast<std::int64_t>(t.points.size())) return nullptr;
    const auto& p = t.points[static_cast<std::size_t>(idx)];
    return p.frame == frame ? &p : nullptr;
  };
  auto covers = [&](const Trajectory& t, std::int64_t first, std::int64_t last) {
    return point_at(t, first) != nullptr && point_at(t, last) != nullptr &&
           (last - first) == (point_at(t, last) - point_at(t, first));
  };

  for (const auto& target : trajs) {
    if (target.points.size() < kWindowSteps || !covers(target, target.points.front().frame, target.points.back().frame)) {
      ++result.skipped_agents;
      continue;
    }
    const std::int64_t first = target.points.front().frame;
    const std::int64_t last_start = target.points.back().frame - static_cast<std::int64_t>(kWindowSteps) + 1;
    for (std::int64_t start = first; start <= last_start; start += static_cast<std::int64_t>(options.stride)) {
      const std::int64_t end = start + static_cast<std::int64_t>(kWindowSteps) - 1;
      const std::int64_t now = start + static_cast<std::int64_t>(kHistorySteps) - 1;
      const TrackPoint& o = *point_at(target, now);

      struct Candidate {
        double dist;
        std::int64_t id;
        const Trajectory* traj;
      };
      std::vector<Candidate> candidates;
      for (const auto& other : trajs) {
        if (other.agent_id == target.agent_id) continue;
        const TrackPoint* p = point_at(other, now);
        if (!p || !covers(other, start, end)) continue;
        const double dist = std::hypot(p->x - o.x, p->y - o.y);
        if (dist <= options.radius_m) candidates.push_back({dist, other.agent_id, &other});
      }
      std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
      });
      if (candidates.size() > options.n_max) candidates.resize(options.n_max);

      Scene s = make_empty_scene(options.n_max);
      s.scene_id = options.id_prefix + ":" + std::to_string(target.agent_id) + ":" + std::to_string(start);
      s.origin = {o.x, o.y};
      for (std::size_t k = 0; k < kWindowSteps; ++k) {
        const TrackPoint& p = *point_at(target, start + static_cast<std::int64_t>(k));
        Tensor& dst = k < kHistorySteps ? s.target_history : s.target_future;
        const std::size_t r = k < kHistorySteps ? k : k - kHistorySteps;
        dst.at(r, 0) = p.x - o.x;
        dst.at(r, 1) = p.y - o.y;
      }
      for (std::size_t n = 0; n < candidates.size(); ++n) {
        s.neighbor_mask[n] = true;
        for (std::size_t k = 0; k < kWindowSteps; ++k) {
          const TrackPoint& p = *point_at(*candidates[n].traj, start + static_cast<std::int64_t>(k));
          Tensor& dst = k < kHistorySteps ? s.neighbor_histories : s.neighbor_futures;
          const std::size_t r = k < kHistorySteps ? k : k - kHistorySteps;
          dst.at(n, r, 0) = p.x - o.x;
          dst.at(n, r, 1) = p.y - o.y;
        }
      }
      result.scenes.push_back(std::move(s));
    }
  }
  return result;
}

DatasetSplit split_dataset(const std::vector<Scene>& scenes, const SplitFractions& f, std::uint64_t seed) {
  if (!(f.train > 0.0) || !(f.val > 0.0) || !(f.test > 0.0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be positive and sum to 1");
  }
  {
    std::vector<std::string> ids;
    ids.reserve(scenes.size());
    for (const auto& s : scenes) ids.push_back(s.scene_id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("duplicate sceneId in dataset");
  }
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  const double n = static_cast<double>(scenes.size());
  const auto n_val = static_cast<std::size_t>(std::floor(n * f.val + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * f.test + 1e-9));
  const std::size_t n_train = scenes.size() - n_val - n_test;

  DatasetSplit out;
  out.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Scene& s = scenes[order[i]];
    if (i < n_train) {
      out.train.push_back(s);
    } else if (i < n_train + n_val) {
      out.val.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

}  // namespace cdstraj
