#include <fstream>

#include <json.hpp>

#include "cdstraj/data.hpp"
#include "cdstraj/errors.hpp"

namespace cdstraj {

namespace {

using nlohmann::json;

json rows_json(const Tensor& t, std::size_t slot, std::size_t steps) {
  json out = json::array();
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t base = (slot * steps + k) * 2;
    out.push_back({t[base], t[base + 1]});
  }
  return out;
}

void read_rows(const json& j, Tensor& t, std::size_t slot, std::size_t steps, const char* key) {
  if (!j.is_array() || j.size() != steps) {
    throw DataError(std::string(key) + ": expected " + std::to_string(steps) + " rows");
  }
  for (std::size_t k = 0; k < steps; ++k) {
    const auto& row = j[k];
    if (!row.is_array() || row.size() != 2) throw DataError(std::string(key) + ": rows must be [x, y]");
    const std::size_t base = (slot * steps + k) * 2;
    t[base] = row[0].get<double>();
    t[base + 1] = row[1].get<double>();
  }
}

}  // namespace

std::string scene_to_json_line(const Scene& s) {
  json j;
  j["sceneId"] = s.scene_id;
  j["origin"] = {s.origin[0], s.origin[1]};
  j["targetHistory"] = rows_json(s.target_history, 0, kHistorySteps);
  j["targetFuture"] = rows_json(s.target_future, 0, kFutureSteps);
  json nh = json::array(), nf = json::array(), mask = json::array();
  for (std::size_t i = 0; i < s.n_max(); ++i) {
    nh.push_back(rows_json(s.neighbor_histories, i, kHistorySteps));
    nf.push_back(rows_json(s.neighbor_futures, i, kFutureSteps));
    mask.push_back(static_cast<bool>(s.neighbor_mask[i]));
  }
  j["neighborHistories"] = std::move(nh);
  j["neighborMask"] = std::move(mask);
  j["neighborFutures"] = std::move(nf);
  return j.dump();
}

Scene scene_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scene record: ") + e.what());
  }
  try {
    for (const char* key : {"sceneId", "origin", "targetHistory", "neighborHistories", "neighborMask", "targetFuture",
                            "neighborFutures"}) {
      if (!j.contains(key)) throw DataError(std::string("scene record missing key ") + key);
    }
    const auto& mask = j["neighborMask"];
    if (!mask.is_array() || mask.empty()) throw DataError("neighborMask must be a non-empty array");
    Scene s = make_empty_scene(mask.size());
    s.scene_id = j["sceneId"].get<std::string>();
    s.origin = {j["origin"].at(0).get<double>(), j["origin"].at(1).get<double>()};
    for (std::size_t i = 0; i < mask.size(); ++i) s.neighbor_mask[i] = mask[i].get<bool>();
    read_rows(j["targetHistory"], s.target_history, 0, kHistorySteps, "targetHistory");
    read_rows(j["targetFuture"], s.target_future, 0, kFutureSteps, "targetFuture");
    if (j["neighborHistories"].size() != mask.size() || j["neighborFutures"].size() != mask.size()) {
      throw DataError("neighbor arrays disagree with neighborMask length");
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
      read_rows(j["neighborHistories"][i], s.neighbor_histories, i, kHistorySteps, "neighborHistories");
      read_rows(j["neighborFutures"][i], s.neighbor_futures, i, kFutureSteps, "neighborFutures");
    }
    validate_scene(s);
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scene record: ") + e.what());
  } catch (const ContractError& e) {
    throw DataError(e.what());
  }
}

void write_scenes(const std::filesystem::path& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : scenes) out << scene_to_json_line(s) << '\n';
}

std::vector<Scene> read_scenes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Scene> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(scene_from_json_line(line));
  }
  return out;
}

}  // namespace cdstraj
