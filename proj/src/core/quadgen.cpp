#include "core/quadgen.hpp"

#include "core/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <unordered_map>

namespace mocap {

std::array<Vec2, 4> standardized_square() {
  const double lo = kStdMargin, hi = kStdMargin + kStdInner;
  return {Vec2(lo, lo), Vec2(hi, lo), Vec2(hi, hi), Vec2(lo, hi)};
}

void QuadFilterConfig::validate() const {
  const bool ok = bbox_radius > 0 && min_area > 0 && min_area < max_area && min_edge > 0 &&
                  min_edge < max_edge && min_angle > 0 && min_angle < max_angle && max_angle <= 180.0;
  if (!ok) throw Error(ErrorCode::Config, "quad filter bounds must be positive with min < max");
}

double shoelace_area(const std::array<Vec2, 4>& q) {
  double s = 0.0;
  for (size_t i = 0; i < 4; ++i) {
    const Vec2& a = q[i];
    const Vec2& b = q[(i + 1) % 4];
    s += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * s;
}

bool is_convex(const std::array<Vec2, 4>& q) {
  int sign = 0;
  for (size_t i = 0; i < 4; ++i) {
    const Vec2 e0 = q[(i + 1) % 4] - q[i];
    const Vec2 e1 = q[(i + 2) % 4] - q[(i + 1) % 4];
    const double cross = e0.x() * e1.y() - e0.y() * e1.x();
    const int s = cross > 0.0 ? 1 : (cross < 0.0 ? -1 : 0);
    if (s == 0) return false;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

std::array<double, 4> interior_angles(const std::array<Vec2, 4>& q) {
  std::array<double, 4> out{};
  for (size_t i = 0; i < 4; ++i) {
    const Vec2 a = q[(i + 3) % 4] - q[i];
    const Vec2 b = q[(i + 1) % 4] - q[i];
    const double cross = a.x() * b.y() - a.y() * b.x();
    out[i] = std::atan2(std::abs(cross), a.dot(b)) * 180.0 / std::numbers::pi;
  }
  return out;
}

bool geometric_filter(const std::array<Vec2, 4>& q, const QuadFilterConfig& cfg) {
  if (!is_convex(q)) return false;
  const double area = shoelace_area(q);
  if (!(area > 0.0)) return false;  // counter-clockwise on screen
  if (area < cfg.min_area || area > cfg.max_area) return false;
  for (size_t i = 0; i < 4; ++i) {
    const double len = (q[(i + 1) % 4] - q[i]).norm();
    if (len < cfg.min_edge || len > cfg.max_edge) return false;
  }
  for (double a : interior_angles(q)) {
    if (a < cfg.min_angle || a > cfg.max_angle) return false;
  }
  return true;
}

namespace {

std::array<Vec2, 4> gather(const std::vector<Corner2D>& corners, const std::array<int, 4>& idx) {
  return {corners[static_cast<size_t>(idx[0])].position, corners[static_cast<size_t>(idx[1])].position,
          corners[static_cast<size_t>(idx[2])].position, corners[static_cast<size_t>(idx[3])].position};
}

// Orders four indices clockwise on screen around their centroid, starting
// at the smallest index.
std::array<int, 4> clockwise_order(const std::vector<Corner2D>& corners, std::array<int, 4> idx) {
  Vec2 c = Vec2::Zero();
  for (int i : idx) c += corners[static_cast<size_t>(i)].position;
  c /= 4.0;
  std::array<std::pair<double, int>, 4> keyed;
  for (size_t k = 0; k < 4; ++k) {
    const Vec2 d = corners[static_cast<size_t>(idx[k])].position - c;
    keyed[k] = {std::atan2(d.y(), d.x()), idx[k]};
  }
  std::sort(keyed.begin(), keyed.end());
  for (size_t k = 0; k < 4; ++k) idx[k] = keyed[k].second;
  const auto first = std::min_element(idx.begin(), idx.end());
  std::rotate(idx.begin(), first, idx.end());
  return idx;
}

}  // namespace

std::vector<CandidateQuad> enumerate_candidates(const std::vector<Corner2D>& corners,
                                                const QuadFilterConfig& cfg,
                                                const QuadImageFilter& image_filter) {
  std::vector<CandidateQuad> out;
  const int n = static_cast<int>(corners.size());
  if (n < 4) return out;
  const double r = cfg.bbox_radius;

  // Uniform grid with cell size r: neighbors of a seed lie in the 3x3 block.
  std::unordered_map<long long, std::vector<int>> grid;
  auto cell_of = [r](const Vec2& p) {
    return std::pair<long long, long long>{static_cast<long long>(std::floor(p.x() / r)),
                                           static_cast<long long>(std::floor(p.y() / r))};
  };
  auto key = [](long long cx, long long cy) { return cx * 73856093LL ^ cy * 19349663LL; };
  for (int i = 0; i < n; ++i) {
    const auto [cx, cy] = cell_of(corners[static_cast<size_t>(i)].position);
    grid[key(cx, cy)].push_back(i);
  }

  std::set<std::array<int, 4>> seen;
  std::vector<int> nbrs;
  for (int i = 0; i < n; ++i) {
    const Vec2& p = corners[static_cast<size_t>(i)].position;
    const auto [cx, cy] = cell_of(p);
    nbrs.clear();
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        const auto it = grid.find(key(cx + dx, cy + dy));
        if (it == grid.end()) continue;
        for (int j : it->second) {
          if (j == i) continue;
          const Vec2 d = corners[static_cast<size_t>(j)].position - p;
          if (std::abs(d.x()) <= r && std::abs(d.y()) <= r) nbrs.push_back(j);
        }
      }
    }
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    const size_t m = nbrs.size();
    for (size_t a = 0; a < m; ++a) {
      for (size_t b = a + 1; b < m; ++b) {
        for (size_t c = b + 1; c < m; ++c) {
          std::array<int, 4> sorted{i, nbrs[a], nbrs[b], nbrs[c]};
          std::sort(sorted.begin(), sorted.end());
          if (seen.count(sorted)) continue;
          const auto ordered = clockwise_order(corners, sorted);
          const auto pts = gather(corners, ordered);
          if (!geometric_filter(pts, cfg)) {
            seen.insert(sorted);
            continue;
          }
          if (image_filter && !image_filter(pts)) {
            seen.insert(sorted);
            continue;
          }
          seen.insert(sorted);
          CandidateQuad q;
          q.corner_indices = ordered;
          q.orientation = 0;
          q.homography = homography_from_4pts(pts, standardized_square());
          out.push_back(q);
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const CandidateQuad& x, const CandidateQuad& y) {
    auto sx = x.corner_indices, sy = y.corner_indices;
    std::sort(sx.begin(), sx.end());
    std::sort(sy.begin(), sy.end());
    return sx < sy;
  });
  return out;
}

std::array<CandidateQuad, 4> orientations(const CandidateQuad& q, const std::vector<Corner2D>& corners) {
  std::array<CandidateQuad, 4> out;
  const auto target = standardized_square();
  for (int r = 0; r < 4; ++r) {
    CandidateQuad& o = out[static_cast<size_t>(r)];
    for (int k = 0; k < 4; ++k) {
      o.corner_indices[static_cast<size_t>(k)] = q.corner_indices[static_cast<size_t>((k + r) % 4)];
    }
    o.orientation = (q.orientation + r) % 4;
    o.homography = homography_from_4pts(gather(corners, o.corner_indices), target);
  }
  return out;
}

QuadFilterConfig derive_filter_config(const std::vector<std::array<Vec2, 4>>& truth_quads) {
  if (truth_quads.empty()) {
    throw Error(ErrorCode::InvalidArgument, "no ground-truth quads to derive filter bounds from");
  }
  double amin = INFINITY, amax = 0, emin = INFINITY, emax = 0, angmin = 180, angmax = 0, extent = 0;
  for (const auto& q : truth_quads) {
    const double area = std::abs(shoelace_area(q));
    amin = std::min(amin, area);
    amax = std::max(amax, area);
    for (size_t i = 0; i < 4; ++i) {
      const double len = (q[(i + 1) % 4] - q[i]).norm();
      emin = std::min(emin, len);
      emax = std::max(emax, len);
      for (size_t j = 0; j < 4; ++j) {
        extent = std::max(extent, (q[j] - q[i]).cwiseAbs().maxCoeff());
      }
    }
    for (double a : interior_angles(q)) {
      angmin = std::min(angmin, a);
      angmax = std::max(angmax, a);
    }
  }
  QuadFilterConfig cfg;
  cfg.bbox_radius = 1.5 * extent;
  cfg.min_area = 0.5 * amin;
  cfg.max_area = 1.5 * amax;
  cfg.min_edge = 0.5 * emin;
  cfg.max_edge = 1.5 * emax;
  cfg.min_angle = 0.5 * angmin;
  cfg.max_angle = std::min(180.0, 1.5 * angmax);
  return cfg;
}

std::string dump_candidates_jsonl(const std::vector<CandidateQuad>& quads) {
  std::string out;
  for (const auto& q : quads) {
    std::vector<double> h(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) h[static_cast<size_t>(3 * r + c)] = q.homography.H(r, c);
    const nlohmann::json j = {{"idx", q.corner_indices}, {"orientation", q.orientation}, {"H", h}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace mocap
