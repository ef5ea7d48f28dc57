#include "core/detection.hpp"

#include "core/error.hpp"
#include "core/io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

namespace mocap {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void DetectionFrame::validate(const CodeAlphabet& alphabet) const {
  const int n = static_cast<int>(corners.size());
  for (const auto& r : readings) {
    for (int i : r.idx) {
      if (i < 0 || i >= n) {
        throw Error(ErrorCode::InvalidArgument, "reading references corner " + std::to_string(i) +
                                                    " of " + std::to_string(n));
      }
    }
    if (r.code.size() != 2 || !alphabet.contains(r.code[0]) || !alphabet.contains(r.code[1])) {
      throw Error(ErrorCode::InvalidArgument, "reading code '" + r.code + "' not in alphabet");
    }
  }
}

void OracleNoiseConfig::validate() const {
  if (!(pixel_sigma >= 0.0) || !(dropout_prob >= 0.0 && dropout_prob <= 1.0) ||
      !(mislabel_prob >= 0.0 && mislabel_prob <= 1.0)) {
    throw Error(ErrorCode::Config, "noise config: sigma >= 0 and probabilities in [0,1] required");
  }
}

std::vector<int> cluster_assignment(const std::vector<Corner2D>& corners, double radius) {
  const int n = static_cast<int>(corners.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return corners[static_cast<size_t>(a)].confidence > corners[static_cast<size_t>(b)].confidence;
  });

  std::vector<size_t> rank(static_cast<size_t>(n));
  for (size_t r = 0; r < order.size(); ++r) rank[static_cast<size_t>(order[r])] = r;

  const double cell = std::max(radius, 1e-9);
  std::unordered_map<long long, std::vector<int>> kept_grid;
  auto key = [](long long cx, long long cy) { return cx * 73856093LL ^ cy * 19349663LL; };
  std::vector<int> owner(static_cast<size_t>(n), -1);
  for (int i : order) {
    const Vec2& p = corners[static_cast<size_t>(i)].position;
    const auto cx = static_cast<long long>(std::floor(p.x() / cell));
    const auto cy = static_cast<long long>(std::floor(p.y() / cell));
    int suppressor = -1;
    // Earliest-kept wins so the suppressor is the highest-confidence neighbor.
    size_t best_rank = SIZE_MAX;
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        const auto it = kept_grid.find(key(cx + dx, cy + dy));
        if (it == kept_grid.end()) continue;
        for (int j : it->second) {
          if ((corners[static_cast<size_t>(j)].position - p).norm() < radius) {
            if (rank[static_cast<size_t>(j)] < best_rank) {
              best_rank = rank[static_cast<size_t>(j)];
              suppressor = j;
            }
          }
        }
      }
    }
    if (suppressor >= 0) {
      owner[static_cast<size_t>(i)] = suppressor;
    } else {
      owner[static_cast<size_t>(i)] = i;
      kept_grid[key(cx, cy)].push_back(i);
    }
  }
  return owner;
}

std::vector<Corner2D> cluster_duplicates(const std::vector<Corner2D>& corners, double radius) {
  const auto owner = cluster_assignment(corners, radius);
  std::vector<Corner2D> out;
  for (size_t i = 0; i < corners.size(); ++i) {
    if (owner[i] == static_cast<int>(i)) out.push_back(corners[i]);
  }
  return out;
}

DetectionFrame cluster_frame(const DetectionFrame& frame, double radius) {
  const auto owner = cluster_assignment(frame.corners, radius);
  std::vector<int> new_index(frame.corners.size(), -1);
  DetectionFrame out;
  out.frame_index = frame.frame_index;
  out.camera_id = frame.camera_id;
  for (size_t i = 0; i < frame.corners.size(); ++i) {
    if (owner[i] == static_cast<int>(i)) {
      new_index[i] = static_cast<int>(out.corners.size());
      out.corners.push_back(frame.corners[i]);
    }
  }
  // A reading that names a suppressed corner no longer describes a quad of
  // surviving corners; handing its label to the survivor would mislabel it.
  for (const auto& r : frame.readings) {
    CodeReading m = r;
    bool intact = true;
    for (auto& i : m.idx) {
      i = new_index[static_cast<size_t>(i)];
      intact = intact && i >= 0;
    }
    if (intact) out.readings.push_back(std::move(m));
  }
  return out;
}

OracleDetection oracle_detect(const FrameTruth& truth, const Camera& camera, int camera_index,
                              const SuitLayout& layout, const OracleNoiseConfig& noise) {
  noise.validate();
  OracleDetection out;
  out.frame.frame_index = truth.frame_index;
  out.frame.camera_id = camera.id;

  std::mt19937_64 rng(mix_seed(mix_seed(noise.seed, static_cast<std::uint64_t>(truth.frame_index)),
                               static_cast<std::uint64_t>(camera.id)));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto& visible = truth.visible_corners[static_cast<size_t>(camera_index)];
  std::unordered_map<int, int> emitted;  // corner id -> index in frame
  for (int id : visible) {
    const double u_drop = uni(rng);
    const double nx = gauss(rng), ny = gauss(rng);
    const double conf = 0.5 + 0.5 * uni(rng);
    if (u_drop < noise.dropout_prob) continue;
    const Vec2 px = project(camera, truth.positions[static_cast<size_t>(id)]);
    Corner2D c;
    c.position = px + noise.pixel_sigma * Vec2(nx, ny);
    c.confidence = conf;
    emitted[id] = static_cast<int>(out.frame.corners.size());
    out.frame.corners.push_back(c);
    out.truth_ids.push_back(id);
  }

  const int n_codes = static_cast<int>(layout.quads().size());
  for (int q : truth.visible_quads[static_cast<size_t>(camera_index)]) {
    const double u_mis = uni(rng);
    const double u_pick = uni(rng);
    const auto& quad = layout.quads()[static_cast<size_t>(q)];
    CodeReading r;
    bool complete = true;
    for (size_t k = 0; k < 4; ++k) {
      const auto it = emitted.find(quad.corners[k]);
      if (it == emitted.end()) {
        complete = false;
        break;
      }
      r.idx[k] = it->second;
    }
    if (!complete) continue;
    bool mislabeled = false;
    r.code = quad.code;
    if (n_codes > 1 && u_mis < noise.mislabel_prob) {
      int other = static_cast<int>(u_pick * (n_codes - 1));
      other = std::min(other, n_codes - 2);
      if (other >= q) ++other;
      r.code = layout.quads()[static_cast<size_t>(other)].code;
      mislabeled = true;
    }
    r.confidence = 1.0;
    out.frame.readings.push_back(std::move(r));
    out.reading_mislabeled.push_back(mislabeled);
  }
  return out;
}

std::string serialize_detection(const DetectionFrame& frame) {
  using nlohmann::json;
  json corners = json::array();
  for (const auto& c : frame.corners) {
    corners.push_back({{"x", c.position.x()}, {"y", c.position.y()}, {"conf", c.confidence}});
  }
  json readings = json::array();
  for (const auto& r : frame.readings) {
    readings.push_back({{"idx", r.idx}, {"code", r.code}, {"conf", r.confidence}});
  }
  const json j = {{"frame", frame.frame_index},
                  {"cam", frame.camera_id},
                  {"corners", std::move(corners)},
                  {"readings", std::move(readings)}};
  return j.dump();
}

DetectionFrame parse_detection(const std::string& line) {
  using nlohmann::json;
  try {
    const json j = json::parse(line);
    DetectionFrame f;
    f.frame_index = j.at("frame").get<int>();
    f.camera_id = j.at("cam").get<int>();
    for (const auto& jc : j.at("corners")) {
      Corner2D c;
      c.position = Vec2(jc.at("x").get<double>(), jc.at("y").get<double>());
      c.confidence = jc.at("conf").get<double>();
      f.corners.push_back(c);
    }
    for (const auto& jr : j.at("readings")) {
      const auto idx = jr.at("idx").get<std::vector<int>>();
      if (idx.size() != 4) throw Error(ErrorCode::Config, "reading idx must have 4 entries");
      CodeReading r;
      std::copy(idx.begin(), idx.end(), r.idx.begin());
      r.code = jr.at("code").get<std::string>();
      r.confidence = jr.at("conf").get<double>();
      f.readings.push_back(std::move(r));
    }
    f.validate();
    return f;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed detection line: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    throw Error(ErrorCode::Config, e.what());
  }
}

std::vector<DetectionFrame> load_detections(const std::string& path) {
  std::vector<DetectionFrame> out;
  for (const auto& line : read_lines(path)) out.push_back(parse_detection(line));
  return out;
}

}  // namespace mocap
