#include "core/detection.hpp"
#include "core/error.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace mocap;

namespace {

Camera test_camera() {
  Camera c;
  c.id = 7;
  c.K << 2000, 0, 960, 0, 2000, 540, 0, 0, 1;
  c.dist = {-0.03, 0.002, 0.0001, -0.0002, 0.0};
  c.width = 1920;
  c.height = 1080;
  return c;
}

// Layout corners spread on a plane 2 m in front of the camera, all visible.
struct Sheet {
  SuitLayout layout;
  FrameTruth truth;
};

Sheet make_sheet(int strips, int cps, int frame = 0) {
  Sheet s{generate_synthetic_layout(strips, cps, {}, 3), {}};
  s.truth.frame_index = frame;
  const auto& p = s.layout.patches().front();
  s.truth.positions.resize(static_cast<size_t>(s.layout.n_vertices()), Vec3(0, 0, 2000));
  for (int r = 0; r < p.rows; ++r)
    for (int c = 0; c < p.cols; ++c) s.truth.positions[static_cast<size_t>(p.corner(r, c))] = Vec3(c * 25.0 - 300, r * 25.0 - 200, 2000);
  s.truth.visible_corners.resize(1);
  s.truth.visible_quads.resize(1);
  for (int i = 0; i < s.layout.n_corners(); ++i) s.truth.visible_corners[0].push_back(i);
  for (int q = 0; q < static_cast<int>(s.layout.quads().size()); ++q) s.truth.visible_quads[0].push_back(q);
  return s;
}

// Greedy suppression in descending confidence, ties to the lower index.
std::vector<int> greedy_oracle(const std::vector<Corner2D>& c, double radius) {
  std::vector<int> order(c.size());
  for (size_t i = 0; i < c.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return c[static_cast<size_t>(a)].confidence > c[static_cast<size_t>(b)].confidence;
  });
  std::vector<int> kept;
  for (int i : order) {
    bool clash = false;
    for (int k : kept) clash = clash || (c[static_cast<size_t>(i)].position - c[static_cast<size_t>(k)].position).norm() < radius;
    if (!clash) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

bool same_corners(const std::vector<Corner2D>& a, const std::vector<Corner2D>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].position != b[i].position || a[i].confidence != b[i].confidence) return false;
  return true;
}

}  // namespace

TEST_CASE("cluster keeps the confident corner") {
  const std::vector<Corner2D> two{{Vec2(10, 10), 0.4, {}}, {Vec2(11, 10), 0.9, {}}};
  const auto out = cluster_duplicates(two);
  REQUIRE(out.size() == 1);
  CHECK(out[0].confidence == 0.9);
  CHECK(cluster_assignment(two) == std::vector<int>{1, 1});

  const std::vector<Corner2D> far{{Vec2(10, 10), 0.4, {}}, {Vec2(20, 10), 0.9, {}}};
  CHECK(cluster_duplicates(far).size() == 2);

  const std::vector<Corner2D> tie{{Vec2(10, 10), 0.5, {}}, {Vec2(11, 10), 0.5, {}}};
  CHECK(cluster_assignment(tie) == std::vector<int>{0, 0});
}

TEST_CASE("cluster matches greedy suppression and is idempotent") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 1000; ++t) {
    std::vector<Corner2D> c;
    const int n = 2 + static_cast<int>(u(rng) * 40);
    for (int i = 0; i < n; ++i) {
      // Coarse confidences so ties happen.
      c.push_back({Vec2(u(rng) * 20, u(rng) * 20), std::round(u(rng) * 5) / 5, {}});
    }
    const auto kept = greedy_oracle(c, 3.0);
    std::vector<Corner2D> expect;
    for (int k : kept) expect.push_back(c[static_cast<size_t>(k)]);
    const auto got = cluster_duplicates(c, 3.0);
    CHECK(same_corners(got, expect));
    CHECK(same_corners(cluster_duplicates(got, 3.0), got));
    for (size_t i = 0; i < got.size(); ++i)
      for (size_t j = i + 1; j < got.size(); ++j) CHECK((got[i].position - got[j].position).norm() >= 3.0);
    const auto owner = cluster_assignment(c, 3.0);
    for (size_t i = 0; i < c.size(); ++i) {
      const auto& o = c[static_cast<size_t>(owner[i])];
      CHECK(std::binary_search(kept.begin(), kept.end(), owner[i]));
      CHECK(o.confidence >= c[i].confidence);
    }
  }
}

TEST_CASE("cluster_frame remaps readings and drops broken ones") {
  DetectionFrame f;
  f.corners = {{Vec2(0, 0), 0.9, {}}, {Vec2(30, 0), 0.9, {}}, {Vec2(30, 30), 0.9, {}},
               {Vec2(0, 30), 0.9, {}}, {Vec2(31, 30), 0.5, {}}, {Vec2(60, 0), 0.9, {}}};
  f.readings = {{{0, 1, 2, 3}, "A1", 1.0}, {{1, 5, 4, 2}, "B2", 1.0}};
  const auto out = cluster_frame(f, 3.0);
  CHECK(out.corners.size() == 5);
  REQUIRE(out.readings.size() == 1);
  CHECK(out.readings[0].code == "A1");
  CHECK(out.readings[0].idx == std::array<int, 4>{0, 1, 2, 3});
}

TEST_CASE("noiseless oracle reproduces the truth") {
  const auto s = make_sheet(6, 8);
  const Camera cam = test_camera();
  const auto det = oracle_detect(s.truth, cam, 0, s.layout, {0.0, 0.0, 0.0, 5});
  CHECK(det.frame.camera_id == 7);
  REQUIRE(det.frame.corners.size() == static_cast<size_t>(s.layout.n_corners()));
  for (size_t i = 0; i < det.truth_ids.size(); ++i) {
    CHECK(det.frame.corners[i].position == project(cam, s.truth.positions[static_cast<size_t>(det.truth_ids[i])]));
  }
  REQUIRE(det.frame.readings.size() == s.layout.quads().size());
  for (const auto& r : det.frame.readings) {
    for (int k = 0; k < 4; ++k) CHECK(s.layout.label(r.code, k + 1) == det.truth_ids[static_cast<size_t>(r.idx[static_cast<size_t>(k)])]);
  }
  CHECK(std::none_of(det.reading_mislabeled.begin(), det.reading_mislabeled.end(), [](bool b) { return b; }));
  CHECK_NOTHROW(det.frame.validate());
}

TEST_CASE("dropout and mislabel extremes") {
  const auto s = make_sheet(6, 8);
  const Camera cam = test_camera();
  const auto gone = oracle_detect(s.truth, cam, 0, s.layout, {0.0, 1.0, 0.0, 5});
  CHECK(gone.frame.corners.empty());
  CHECK(gone.frame.readings.empty());

  const auto wrong = oracle_detect(s.truth, cam, 0, s.layout, {0.0, 0.0, 1.0, 5});
  REQUIRE(wrong.frame.readings.size() == s.layout.quads().size());
  for (size_t i = 0; i < wrong.frame.readings.size(); ++i) {
    const auto& r = wrong.frame.readings[i];
    CHECK(wrong.reading_mislabeled[i]);
    CHECK(s.layout.code_index(r.code) >= 0);  // still a real code
    const int true_quad = s.truth.visible_quads[0][i];
    CHECK(r.code != s.layout.quads()[static_cast<size_t>(true_quad)].code);
  }
}

TEST_CASE("pixel noise has the configured spread") {
  const auto s = make_sheet(25, 25);
  const Camera cam = test_camera();
  std::vector<double> dx, dy;
  for (int frame = 0; dx.size() < 10000; ++frame) {
    auto truth = s.truth;
    truth.frame_index = frame;
    const auto det = oracle_detect(truth, cam, 0, s.layout, {0.5, 0.0, 0.0, 99});
    for (size_t i = 0; i < det.truth_ids.size(); ++i) {
      const Vec2 d = det.frame.corners[i].position - project(cam, truth.positions[static_cast<size_t>(det.truth_ids[i])]);
      dx.push_back(d.x());
      dy.push_back(d.y());
    }
  }
  auto stdev = [](const std::vector<double>& v) {
    double m = 0, q = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return std::sqrt(q / static_cast<double>(v.size() - 1));
  };
  CHECK(stdev(dx) >= 0.49);
  CHECK(stdev(dx) <= 0.51);
  CHECK(stdev(dy) >= 0.49);
  CHECK(stdev(dy) <= 0.51);
}

TEST_CASE("oracle is deterministic per seed, frame and camera") {
  const auto s = make_sheet(5, 5);
  const Camera cam = test_camera();
  const OracleNoiseConfig n{0.3, 0.2, 0.1, 17};
  const auto a = oracle_detect(s.truth, cam, 0, s.layout, n);
  const auto b = oracle_detect(s.truth, cam, 0, s.layout, n);
  CHECK(serialize_detection(a.frame) == serialize_detection(b.frame));
  auto other = n;
  other.seed = 18;
  CHECK(serialize_detection(oracle_detect(s.truth, cam, 0, s.layout, other).frame) != serialize_detection(a.frame));
  CHECK_THROWS_AS(oracle_detect(s.truth, cam, 0, s.layout, {-1.0, 0.0, 0.0, 1}), Error);
  CHECK_THROWS_AS(oracle_detect(s.truth, cam, 0, s.layout, {0.0, 1.5, 0.0, 1}), Error);
}

TEST_CASE("detection lines round trip exactly") {
  const auto s = make_sheet(4, 4);
  const auto det = oracle_detect(s.truth, test_camera(), 0, s.layout, {0.7, 0.1, 0.1, 3}).frame;
  const std::string line = serialize_detection(det);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = parse_detection(line);
  CHECK(back.frame_index == det.frame_index);
  CHECK(back.camera_id == det.camera_id);
  CHECK(same_corners(back.corners, det.corners));
  REQUIRE(back.readings.size() == det.readings.size());
  for (size_t i = 0; i < det.readings.size(); ++i) {
    CHECK(back.readings[i].idx == det.readings[i].idx);
    CHECK(back.readings[i].code == det.readings[i].code);
    CHECK(back.readings[i].confidence == det.readings[i].confidence);
  }
  CHECK(serialize_detection(back) == line);

  CHECK_THROWS_AS(parse_detection("{\"frame\":0}"), Error);
  CHECK_THROWS_AS(parse_detection("nope"), Error);
  CHECK_THROWS_AS(load_detections("/nonexistent/detections.jsonl"), Error);
}

TEST_CASE("frame validation") {
  DetectionFrame f;
  f.corners = {{Vec2(0, 0), 1, {}}, {Vec2(1, 0), 1, {}}, {Vec2(1, 1), 1, {}}, {Vec2(0, 1), 1, {}}};
  f.readings = {{{0, 1, 2, 3}, "A1", 1.0}};
  CHECK_NOTHROW(f.validate());
  f.readings[0].idx[3] = 4;
  CHECK_THROWS_AS(f.validate(), Error);
  f.readings[0].idx[3] = 3;
  f.readings[0].code = "A0";  // '0' is not in the alphabet
  CHECK_THROWS_AS(f.validate(), Error);
}

TEST_CASE("seed mixing spreads nearby inputs") {
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  CHECK(mix_seed(0, 0) != mix_seed(0, 1));
}
