#include "core/error.hpp"
#include "core/io_util.hpp"
#include "core/metrics.hpp"
#include "core/pipeline.hpp"
#include "core/simulator.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

using namespace mocap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Linear interpolation between closest ranks, h = (n - 1) p.
double type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mocap_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

size_t line_count(const std::string& text) { return static_cast<size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_CASE("percentile table matches type-7 interpolation") {
  std::mt19937_64 rng(5);
  std::lognormal_distribution<double> dist(0.0, 1.0);
  for (int n : {1, 2, 7, 1000, 12345}) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = dist(rng);
    const auto rows = percentile_table(v);
    REQUIRE(rows.size() == 4);
    const double ps[] = {95.0, 99.0, 99.9, 99.99};
    for (size_t r = 0; r < 4; ++r) {
      CHECK(rows[r].percent == ps[r]);
      CHECK(rows[r].value == doctest::Approx(type7(v, ps[r] / 100.0)).epsilon(1e-14));
    }
    for (size_t r = 1; r < 4; ++r) CHECK(rows[r].value >= rows[r - 1].value);
  }
  const auto custom = percentile_table({1, 2, 3, 4, 5}, {0.0, 50.0, 100.0});
  CHECK(custom[0].value == 1.0);
  CHECK(custom[1].value == 3.0);
  CHECK(custom[2].value == 5.0);
}

TEST_CASE("log histogram conserves every sample") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> expo(-6.0, 4.0);
  std::vector<double> v;
  for (int i = 0; i < 5000; ++i) v.push_back(std::pow(10.0, expo(rng)));
  v.insert(v.end(), {0.0, 0.0, 1e-4, 100.0, 1e6});
  const auto h = log_histogram(v, 1e-4, 100.0, 4);
  REQUIRE(h.edges.size() == 6 * 4 + 1);
  REQUIRE(h.counts.size() == 6 * 4);
  CHECK(h.total() == static_cast<long long>(v.size()));
  for (size_t b = 0; b + 1 < h.edges.size(); ++b)
    CHECK(std::log10(h.edges[b + 1] / h.edges[b]) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(h.edges.front() == doctest::Approx(1e-4));
  CHECK(h.edges.back() == doctest::Approx(100.0));

  // Independent bin assignment by linear scan of the edges.
  std::vector<long long> counts(h.counts.size(), 0);
  long long under = 0, over = 0;
  for (double x : v) {
    if (x < h.edges.front()) {
      ++under;
    } else if (x >= h.edges.back()) {
      ++over;
    } else {
      size_t b = 0;
      while (!(x < h.edges[b + 1])) ++b;
      ++counts[b];
    }
  }
  CHECK(h.underflow == under);
  CHECK(h.overflow == over);
  CHECK(h.counts == counts);
}

TEST_CASE("summary statistics") {
  const auto s = summarize({3, 4, -5, 0});
  CHECK(s.count == 4);
  CHECK(s.mean == doctest::Approx(0.5));
  CHECK(s.rms == doctest::Approx(std::sqrt(50.0 / 4)));
  CHECK(s.max == 4);
  CHECK(summarize({}).count == 0);
}

TEST_CASE("histogram csv and svg") {
  const HistogramSeries series = {{"before", log_histogram({0.5, 2, 20, 2000}, 1e-1, 1e2, 2)},
                                  {"after", log_histogram({0.01, 0.2, 0.3}, 1e-1, 1e2, 2)}};
  const auto csv = histogram_csv(series);
  // header + underflow + 6 bins + overflow
  CHECK(line_count(csv) == 1 + 1 + 6 + 1);
  CHECK(csv.rfind("bin_lo,bin_hi,before,after\n", 0) == 0);
  long long sum_before = 0, sum_after = 0;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    REQUIRE(cols.size() == 4);
    sum_before += std::stoll(cols[2]);
    sum_after += std::stoll(cols[3]);
  }
  CHECK(sum_before == 4);
  CHECK(sum_after == 3);

  const auto svg = histogram_svg(series, "Error <test>", "mm");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("<test>") == std::string::npos);  // escaped

  HistogramSeries mismatched = series;
  mismatched[1].second = log_histogram({1}, 1e-2, 1e2, 2);
  CHECK_THROWS_AS(histogram_csv(mismatched), Error);
}

TEST_CASE("format_double round trips") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = d(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
    CHECK(std::stod(format_double(x)) == x);
  }
}

TEST_CASE("config defaults, merge and unknown keys") {
  const auto def = parse_pipeline_config("");
  CHECK(json::parse(serialize_pipeline_config(def)) == json::parse(default_config_json()));
  CHECK(json::parse(serialize_pipeline_config(parse_pipeline_config("{}"))) == json::parse(default_config_json()));

  const auto c = parse_pipeline_config(R"({"seed": 7, "fit": {"refine": {"lambda_g": 5}}, "inpaint": {"overlap": 10}})");
  CHECK(c.seed == 7);
  CHECK(c.fit.refine.lambda_g == 5);
  CHECK(c.fit.refine.lambda_j == def.fit.refine.lambda_j);
  CHECK(c.inpaint.plan.overlap == 10);
  CHECK(c.inpaint.plan.window_length == def.inpaint.plan.window_length);
  // serialize/parse is a fixed point
  CHECK(json::parse(serialize_pipeline_config(parse_pipeline_config(serialize_pipeline_config(c)))) ==
        json::parse(serialize_pipeline_config(c)));

  auto code_of = [](const std::string& doc) {
    try {
      parse_pipeline_config(doc);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;  // sentinel: no throw
  };
  CHECK(code_of(R"({"sed": 1})") == ErrorCode::Config);
  CHECK(code_of(R"({"fit": {"refine": {"lambda_gg": 1}}})") == ErrorCode::Config);
  CHECK(code_of(R"({"seed": "x"})") == ErrorCode::Config);
  CHECK(code_of("{not json") == ErrorCode::Config);
  CHECK(code_of("[1, 2]") == ErrorCode::Config);
  CHECK(code_of(R"({"eval": {"hist_lo": 0}})") == ErrorCode::Config);
  CHECK(code_of(R"({"inpaint": {"window_length": 100, "overlap": 80}})") == ErrorCode::Config);
  CHECK(code_of(R"({"fit": {"init": "guess"}})") == ErrorCode::Config);
}

TEST_CASE("dotted overrides") {
  std::string doc = apply_config_override("", "fit.refine.lambda_g", "250");
  doc = apply_config_override(doc, "paths.output_dir", "some/where");
  doc = apply_config_override(doc, "simulate.scene.noise.sigma", "0.5");
  const auto c = parse_pipeline_config(doc);
  CHECK(c.fit.refine.lambda_g == 250);
  CHECK(c.paths.output_dir == "some/where");
  CHECK(c.simulate.scene.noise.pixel_sigma == 0.5);

  // Later overrides win over the file contents.
  const auto again = parse_pipeline_config(apply_config_override(R"({"seed": 3})", "seed", "11"));
  CHECK(again.seed == 11);

  CHECK_THROWS_AS(parse_pipeline_config(apply_config_override("", "fit.nope", "1")), Error);
  CHECK_THROWS_AS(apply_config_override("", "", "1"), Error);
}

TEST_CASE("template and seed files round trip") {
  const auto scene = build_scene(SceneSpec::default_humanoid());
  const auto t = make_template(scene, 1);
  const auto back = parse_template(serialize_template(t));
  CHECK(back.vertices == t.vertices);
  CHECK(back.triangles == t.triangles);
  CHECK(back.joints == t.joints);
  CHECK(back.parents == t.parents);
  CHECK(back.weights == t.weights);

  const auto seeds = make_seeds(scene, t, 40);
  const auto sb = parse_seeds(serialize_seeds(seeds));
  REQUIRE(sb.size() == seeds.size());
  for (size_t i = 0; i < seeds.size(); ++i) {
    CHECK(sb[i].corner == seeds[i].corner);
    CHECK(sb[i].triangle == seeds[i].triangle);
    CHECK(sb[i].barycentric == seeds[i].barycentric);
  }
  CHECK_THROWS_AS(parse_template("{}"), Error);
  CHECK_THROWS_AS(parse_seeds("[{\"corner\": 1}]"), Error);
}

TEST_CASE("short command chain writes its outputs") {
  const fs::path dir = scratch("chain");
  std::string doc = apply_config_override("", "paths.output_dir", dir.string());
  doc = apply_config_override(doc, "simulate.frames", "3");
  doc = apply_config_override(doc, "workers", "1");
  const auto cfg = parse_pipeline_config(doc);

  const auto sim = run_command("simulate", cfg);
  CHECK(json::parse(sim.summary).at("command") == "simulate");
  for (const char* f : {"calibration.json", "layout.json", "detections.jsonl", "truth.jsonl", "model_gt.json",
                        "template.json", "seeds.json"})
    CHECK(fs::exists(dir / f));
  for (const auto& o : sim.outputs) CHECK(fs::exists(o));

  const auto rec = run_command("reconstruct", cfg);
  CHECK(fs::exists(dir / "clouds.jsonl"));
  CHECK(load_clouds((dir / "clouds.jsonl").string()).size() == 3);
  CHECK(!rec.outputs.empty());

  const auto ev = run_command("eval", cfg);
  const auto report = json::parse(read_text_file((dir / "eval.json").string()));
  CHECK(report.at("frames") == 3);
  CHECK(report.at("histogram_total") == report.at("observations"));
  CHECK(json::parse(ev.summary).at("command") == "eval");
  CHECK(fs::exists(dir / "eval_hist.svg"));

  // export-mesh reads model.json; point it at the ground truth model.
  const auto exp_cfg = parse_pipeline_config(apply_config_override(doc, "paths.model", (dir / "model_gt.json").string()));
  run_command("export-mesh", exp_cfg);
  const std::string obj = read_text_file((dir / "mesh_rest.obj").string());
  CHECK(obj.find("\nv ") != std::string::npos);
  CHECK(obj.find("\nf ") != std::string::npos);

  try {
    run_command("dance", cfg);
    FAIL("unknown verb accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
  fs::remove_all(dir);
}

TEST_CASE("missing and malformed inputs map to their error codes") {
  const fs::path dir = scratch("errors");
  fs::create_directories(dir);
  const std::string doc = apply_config_override("", "paths.output_dir", dir.string());
  const auto cfg = parse_pipeline_config(doc);
  auto code_of = [&](const std::string& verb, const PipelineConfig& c) {
    try {
      run_command(verb, c);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  // Unreadable calibration is its own failure class, ahead of plain I/O.
  CHECK(code_of("reconstruct", cfg) == ErrorCode::Calibration);
  write_text_file((dir / "calibration.json").string(), "{\"cameras\": [{\"id\": 0}]}");
  CHECK(code_of("reconstruct", cfg) == ErrorCode::Calibration);

  const auto one = parse_pipeline_config(apply_config_override(doc, "simulate.frames", "1"));
  run_command("simulate", one);
  fs::remove(dir / "detections.jsonl");
  CHECK(code_of("reconstruct", cfg) == ErrorCode::Io);
  CHECK(code_of("eval", cfg) == ErrorCode::Io);
  write_text_file((dir / "detections.jsonl").string(), "{\"frame\": 0\n");
  CHECK(code_of("reconstruct", cfg) != ErrorCode::InvalidArgument);
  fs::remove_all(dir);
}
