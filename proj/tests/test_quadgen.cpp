#include "core/error.hpp"
#include "core/quadgen.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

using namespace mocap;

namespace {

using Quad = std::array<Vec2, 4>;

QuadFilterConfig permissive() {
  QuadFilterConfig c;
  c.bbox_radius = 1000;
  c.min_area = 1e-3;
  c.max_area = 1e9;
  c.min_edge = 1e-3;
  c.max_edge = 1e6;
  c.min_angle = 1e-3;
  c.max_angle = 179.999;
  return c;
}

std::vector<Corner2D> to_corners(const std::vector<Vec2>& pts) {
  std::vector<Corner2D> out;
  for (const auto& p : pts) out.push_back({p, 1.0, {}});
  return out;
}

// Second implementation of the filter: diagonal-cross area, acos angles,
// turn signs from 3x3 determinants.
bool oracle_filter(const Quad& q, const QuadFilterConfig& cfg) {
  const Vec2 d0 = q[2] - q[0], d1 = q[3] - q[1];
  const double area = 0.5 * (d0.x() * d1.y() - d0.y() * d1.x());
  int pos = 0, neg = 0;
  for (int i = 0; i < 4; ++i) {
    Mat3 m;
    for (int k = 0; k < 3; ++k) m.row(k) << q[static_cast<size_t>((i + k) % 4)].x(), q[static_cast<size_t>((i + k) % 4)].y(), 1.0;
    const double det = m.determinant();
    pos += det > 0;
    neg += det < 0;
  }
  if (pos != 4) return false;  // clockwise on screen means every turn is positive in (x, y-down)
  if (area < cfg.min_area || area > cfg.max_area) return false;
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = q[static_cast<size_t>((i + 3) % 4)] - q[static_cast<size_t>(i)];
    const Vec2 b = q[static_cast<size_t>((i + 1) % 4)] - q[static_cast<size_t>(i)];
    const double len = b.norm();
    if (len < cfg.min_edge || len > cfg.max_edge) return false;
    const double ang = std::acos(std::clamp(a.dot(b) / (a.norm() * b.norm()), -1.0, 1.0)) * 180.0 / std::numbers::pi;
    if (ang < cfg.min_angle || ang > cfg.max_angle) return false;
  }
  (void)neg;
  return true;
}

// Brute force: every 4-subset that fits in one seed's box, tried in all
// three cyclic orders (and their reverses).
std::set<std::array<int, 4>> oracle_enumerate(const std::vector<Vec2>& p, const QuadFilterConfig& cfg) {
  std::set<std::array<int, 4>> out;
  const int n = static_cast<int>(p.size());
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      for (int c = b + 1; c < n; ++c)
        for (int d = c + 1; d < n; ++d) {
          const std::array<int, 4> s{a, b, c, d};
          bool boxed = false;
          for (int seed : s) {
            bool all = true;
            for (int o : s) {
              const Vec2 diff = p[static_cast<size_t>(o)] - p[static_cast<size_t>(seed)];
              all = all && std::abs(diff.x()) <= cfg.bbox_radius && std::abs(diff.y()) <= cfg.bbox_radius;
            }
            boxed = boxed || all;
          }
          if (!boxed) continue;
          const std::array<std::array<int, 4>, 6> orders{{{a, b, c, d}, {a, b, d, c}, {a, c, b, d},
                                                          {a, d, c, b}, {a, c, d, b}, {a, d, b, c}}};
          for (const auto& o : orders) {
            const Quad q{p[static_cast<size_t>(o[0])], p[static_cast<size_t>(o[1])], p[static_cast<size_t>(o[2])],
                         p[static_cast<size_t>(o[3])]};
            if (oracle_filter(q, cfg)) {
              out.insert(s);
              break;
            }
          }
        }
  return out;
}

std::set<std::array<int, 4>> as_sets(const std::vector<CandidateQuad>& qs) {
  std::set<std::array<int, 4>> out;
  for (const auto& q : qs) {
    auto s = q.corner_indices;
    std::sort(s.begin(), s.end());
    out.insert(s);
  }
  return out;
}

}  // namespace

TEST_CASE("standardized square") {
  const auto s = standardized_square();
  CHECK(s[0] == Vec2(20, 20));
  CHECK(s[1] == Vec2(84, 20));
  CHECK(s[2] == Vec2(84, 84));
  CHECK(s[3] == Vec2(20, 84));
  CHECK(kStdSize == 2 * kStdMargin + kStdInner);
}

TEST_CASE("filter on simple squares") {
  const Quad sq{Vec2(0, 0), Vec2(40, 0), Vec2(40, 40), Vec2(0, 40)};
  QuadFilterConfig cfg;
  cfg.min_area = 100;
  cfg.max_area = 10000;
  CHECK(shoelace_area(sq) == doctest::Approx(1600));
  CHECK(geometric_filter(sq, cfg));
  QuadFilterConfig tight = cfg;
  tight.max_edge = 10;
  CHECK_FALSE(geometric_filter(sq, tight));
  // Reversed winding is counter-clockwise on screen.
  const Quad rev{sq[0], sq[3], sq[2], sq[1]};
  CHECK(shoelace_area(rev) < 0);
  CHECK_FALSE(geometric_filter(rev, cfg));
  // Self-intersecting bow tie.
  const Quad bow{sq[0], sq[2], sq[1], sq[3]};
  CHECK_FALSE(is_convex(bow));
  CHECK_FALSE(geometric_filter(bow, cfg));
  for (double a : interior_angles(sq)) CHECK(a == doctest::Approx(90));
}

TEST_CASE("filter agrees with an independent predicate on random quads") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 100);
  QuadFilterConfig cfg;
  cfg.min_area = 300;
  cfg.max_area = 5000;
  cfg.min_edge = 10;
  cfg.max_edge = 90;
  cfg.min_angle = 30;
  cfg.max_angle = 150;
  int accepted = 0;
  for (int t = 0; t < 10000; ++t) {
    Quad q;
    if (t % 2 == 0) {
      for (auto& p : q) p = Vec2(u(rng), u(rng));
    } else {
      // Jittered squares so the accepting branch is exercised too.
      const Vec2 c(u(rng), u(rng));
      const double s = 10 + u(rng) * 0.5, th = u(rng) * 0.0628;
      const Quad base{Vec2(-1, -1), Vec2(1, -1), Vec2(1, 1), Vec2(-1, 1)};
      for (size_t k = 0; k < 4; ++k) {
        const Vec2 b = base[k] * s + Vec2(u(rng), u(rng)) * 0.08;
        q[k] = c + Vec2(std::cos(th) * b.x() - std::sin(th) * b.y(), std::sin(th) * b.x() + std::cos(th) * b.y());
      }
    }
    const bool got = geometric_filter(q, cfg);
    CHECK(got == oracle_filter(q, cfg));
    accepted += got;
  }
  CHECK(accepted > 1000);
}

TEST_CASE("enumeration of trivial inputs") {
  CHECK(enumerate_candidates(to_corners({Vec2(0, 0), Vec2(30, 0), Vec2(30, 30), Vec2(0, 30)}), permissive()).size() == 1);
  CHECK(enumerate_candidates(to_corners({Vec2(0, 0), Vec2(10, 0), Vec2(20, 0), Vec2(30, 0)}), permissive()).empty());
  CHECK(enumerate_candidates(to_corners({Vec2(0, 0), Vec2(10, 0), Vec2(20, 0)}), permissive()).empty());
  // Winding of the emitted quad is clockwise on screen and starts at the smallest index.
  const auto q = enumerate_candidates(to_corners({Vec2(30, 30), Vec2(0, 0), Vec2(0, 30), Vec2(30, 0)}), permissive());
  REQUIRE(q.size() == 1);
  CHECK(q[0].corner_indices == std::array<int, 4>{0, 2, 1, 3});
}

TEST_CASE("enumeration matches brute force on perspective grids") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> jitter(0, 0.4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 12; ++trial) {
    // A 6x6 grid seen through a random homography, plus clutter.
    Mat3 h = Mat3::Identity();
    h(0, 0) = 22 + 4 * u(rng);
    h(1, 1) = 22 + 4 * u(rng);
    h(0, 1) = 5 * u(rng);
    h(1, 0) = 5 * u(rng);
    h(0, 2) = 300;
    h(1, 2) = 200;
    h(2, 0) = 0.01 * u(rng);
    h(2, 1) = 0.01 * u(rng);
    std::vector<Vec2> pts;
    std::vector<Quad> truth;
    auto warp = [&](double x, double y) {
      const Vec3 w = h * Vec3(x, y, 1);
      return Vec2(w.x() / w.z(), w.y() / w.z());
    };
    const int g = 6;
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) pts.push_back(warp(x, y) + Vec2(jitter(rng), jitter(rng)));
    for (int k = 0; k < 4; ++k) pts.push_back(warp(2.5 + 3 * u(rng), 2.5 + 3 * u(rng)));
    std::shuffle(pts.begin(), pts.end(), rng);
    for (int y = 0; y + 1 < g; ++y)
      for (int x = 0; x + 1 < g; ++x) truth.push_back({warp(x, y), warp(x + 1, y), warp(x + 1, y + 1), warp(x, y + 1)});

    QuadFilterConfig cfg = derive_filter_config(truth);
    const auto got = enumerate_candidates(to_corners(pts), cfg);
    CHECK(as_sets(got) == oracle_enumerate(pts, cfg));
    for (const auto& q : got) {
      std::set<int> distinct(q.corner_indices.begin(), q.corner_indices.end());
      CHECK(distinct.size() == 4);
      CHECK(q.orientation == 0);
      CHECK(q.corner_indices[0] == *distinct.begin());
    }

    // Conservative completeness: each grid cell is found.
    const auto sets = as_sets(got);
    auto nearest = [&](const Vec2& p) {
      int best = 0;
      for (size_t i = 1; i < pts.size(); ++i)
        if ((pts[i] - p).norm() < (pts[static_cast<size_t>(best)] - p).norm()) best = static_cast<int>(i);
      return best;
    };
    for (const auto& t : truth) {
      std::array<int, 4> s{nearest(t[0]), nearest(t[1]), nearest(t[2]), nearest(t[3])};
      std::sort(s.begin(), s.end());
      CHECK(sets.count(s) == 1);
    }

    // Input order does not matter (as sets of points).
    std::vector<size_t> perm(pts.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Vec2> shuffled(pts.size());
    for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = pts[perm[i]];
    std::set<std::array<int, 4>> remapped;
    for (auto s : as_sets(enumerate_candidates(to_corners(shuffled), cfg))) {
      for (auto& v : s) v = static_cast<int>(perm[static_cast<size_t>(v)]);
      std::sort(s.begin(), s.end());
      remapped.insert(s);
    }
    CHECK(remapped == sets);
  }
}

TEST_CASE("image filter veto") {
  const auto corners = to_corners({Vec2(0, 0), Vec2(30, 0), Vec2(30, 30), Vec2(0, 30)});
  int calls = 0;
  const auto none = enumerate_candidates(corners, permissive(), [&](const Quad&) {
    ++calls;
    return false;
  });
  CHECK(none.empty());
  CHECK(calls == 1);
}

TEST_CASE("orientations") {
  const auto corners = to_corners({Vec2(100, 100), Vec2(140, 100), Vec2(140, 140), Vec2(100, 140)});
  const auto base = enumerate_candidates(corners, permissive());
  REQUIRE(base.size() == 1);
  const auto o = orientations(base[0], corners);
  const auto sq = standardized_square();
  for (int r = 0; r < 4; ++r) {
    const auto& q = o[static_cast<size_t>(r)];
    CHECK(q.orientation == r);
    for (int k = 0; k < 4; ++k) {
      CHECK(q.corner_indices[static_cast<size_t>(k)] == base[0].corner_indices[static_cast<size_t>((k + r) % 4)]);
      const Vec2 w = warp_point(q.homography, corners[static_cast<size_t>(q.corner_indices[static_cast<size_t>(k)])].position);
      CHECK((w - sq[static_cast<size_t>(k)]).norm() < 1e-9);
    }
  }
  // Four rotations bring back the original order.
  auto q = base[0];
  for (int r = 0; r < 4; ++r) q = orientations(q, corners)[1];
  CHECK(q.corner_indices == base[0].corner_indices);
  CHECK(q.orientation == 0);

  // Consecutive orientations differ by the square's quarter turn about its
  // center, (x, y) -> c + (dy, -dx), composed on the output side.
  Mat3 turn;
  turn << 0, 1, 0, -1, 0, 104, 0, 0, 1;
  for (int r = 0; r < 4; ++r) {
    const Mat3 next = o[static_cast<size_t>((r + 1) % 4)].homography.H;
    Mat3 pred = turn * o[static_cast<size_t>(r)].homography.H;
    pred /= pred(2, 2);
    CHECK((next / next(2, 2) - pred).norm() < 1e-9 * next.norm());
  }
}

TEST_CASE("orientations of a skewed quad") {
  const auto corners = to_corners({Vec2(10, 12), Vec2(55, 8), Vec2(62, 47), Vec2(5, 40)});
  const auto base = enumerate_candidates(corners, permissive());
  REQUIRE(base.size() == 1);
  const auto sq = standardized_square();
  for (const auto& q : orientations(base[0], corners)) {
    for (int k = 0; k < 4; ++k) {
      const Vec2 w = warp_point(q.homography, corners[static_cast<size_t>(q.corner_indices[static_cast<size_t>(k)])].position);
      CHECK((w - sq[static_cast<size_t>(k)]).norm() < 1e-9);
    }
  }
}

TEST_CASE("derived filter bounds carry slack") {
  const std::vector<Quad> truth{{Vec2(0, 0), Vec2(20, 0), Vec2(20, 20), Vec2(0, 20)},
                                {Vec2(0, 0), Vec2(30, 0), Vec2(30, 30), Vec2(0, 30)}};
  const auto cfg = derive_filter_config(truth);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.min_area <= 400 * 0.5 + 1e-9);
  CHECK(cfg.max_area >= 900 * 1.5 - 1e-9);
  CHECK(cfg.min_edge <= 10 + 1e-9);
  CHECK(cfg.max_edge >= 45 - 1e-9);
  for (const auto& q : truth) CHECK(geometric_filter(q, cfg));
  CHECK_THROWS_AS(derive_filter_config({}), Error);
  QuadFilterConfig bad;
  bad.min_area = bad.max_area + 1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("candidate dump is one JSON line per quad") {
  const auto corners = to_corners({Vec2(0, 0), Vec2(30, 0), Vec2(30, 30), Vec2(0, 30), Vec2(60, 0), Vec2(60, 30)});
  const auto q = enumerate_candidates(corners, permissive());
  const std::string dump = dump_candidates_jsonl(q);
  CHECK(static_cast<size_t>(std::count(dump.begin(), dump.end(), '\n')) == q.size());
}
