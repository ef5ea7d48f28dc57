#include "core/inpaint.hpp"

#include "core/error.hpp"
#include "core/io_util.hpp"
#include "core/mesh.hpp"
#include "core/parallel.hpp"

#include <Eigen/SparseCholesky>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace mocap {

namespace {

constexpr double kCotClamp = 1e4;

std::vector<int> vertex_components(int n, const std::vector<std::vector<int>>& faces) {
  std::vector<int> parent(static_cast<size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };
  for (const auto& [a, b] : face_edges(faces)) {
    const int ra = find(a), rb = find(b);
    if (ra != rb) parent[static_cast<size_t>(std::max(ra, rb))] = std::min(ra, rb);
  }
  std::vector<int> label(static_cast<size_t>(n), -1);
  int next = 0;
  std::vector<int> root_label(static_cast<size_t>(n), -1);
  for (int v = 0; v < n; ++v) {
    const int r = find(v);
    if (root_label[static_cast<size_t>(r)] < 0) root_label[static_cast<size_t>(r)] = next++;
    label[static_cast<size_t>(v)] = root_label[static_cast<size_t>(r)];
  }
  return label;
}

}  // namespace

InpaintConstraints make_constraints(int frames, int vertices, std::vector<DisplacementConstraint> entries) {
  InpaintConstraints c;
  c.frames = frames;
  c.vertices = vertices;
  for (const auto& e : entries) {
    if (e.frame < 0 || e.frame >= frames || e.vertex < 0 || e.vertex >= vertices) {
      throw Error(ErrorCode::InvalidArgument, "constraint out of range");
    }
    if (!e.target.allFinite()) throw Error(ErrorCode::InvalidArgument, "constraint target not finite");
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.vertex < b.vertex;
  });
  for (size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].frame == entries[i - 1].frame && entries[i].vertex == entries[i - 1].vertex) {
      throw Error(ErrorCode::InvalidArgument, "duplicate constraint");
    }
  }
  c.entries = std::move(entries);
  return c;
}

InpaintConstraints unpose_observations(const SkinnedBodyModel& model, const std::vector<FrameObservations>& frames,
                                       const SuitLayout* layout) {
  if (model.poses.size() < frames.size()) {
    throw Error(ErrorCode::InvalidArgument, "model has fewer poses than observed frames");
  }
  std::vector<DisplacementConstraint> entries;
  std::vector<std::string> skipped;
  for (size_t k = 0; k < frames.size(); ++k) {
    const auto G = joint_transforms(model, model.poses[k]);
    for (const auto& o : frames[k]) {
      if (o.vertex < 0 || o.vertex >= model.n_vertices()) {
        throw Error(ErrorCode::InvalidArgument, "observation of unknown vertex " + std::to_string(o.vertex));
      }
      if (layout && layout->never_observed(o.vertex)) continue;
      try {
        const Vec3 d = unskin(G, model.weights.row(o.vertex), o.position) - model.rest[static_cast<size_t>(o.vertex)];
        entries.push_back({static_cast<int>(k), o.vertex, d});
      } catch (const Error& e) {
        skipped.push_back("frame " + std::to_string(k) + " vertex " + std::to_string(o.vertex) + ": " + e.what());
      }
    }
  }
  InpaintConstraints c = make_constraints(static_cast<int>(frames.size()), model.n_vertices(), std::move(entries));
  c.skipped = std::move(skipped);
  return c;
}

Eigen::SparseMatrix<double> build_spatial_laplacian(const std::vector<Vec3>& rest,
                                                    const std::vector<std::vector<int>>& faces, int* clamped) {
  const auto n = static_cast<Eigen::Index>(rest.size());
  const auto tris = triangulate_faces(faces, rest);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(tris.size() * 12);
  int n_clamped = 0;
  for (const auto& t : tris) {
    for (int k = 0; k < 3; ++k) {
      const int i = t[static_cast<size_t>((k + 1) % 3)];
      const int j = t[static_cast<size_t>((k + 2) % 3)];
      const Vec3 u = rest[static_cast<size_t>(i)] - rest[static_cast<size_t>(t[static_cast<size_t>(k)])];
      const Vec3 v = rest[static_cast<size_t>(j)] - rest[static_cast<size_t>(t[static_cast<size_t>(k)])];
      const double cross = u.cross(v).norm();
      double cot;
      if (cross <= 0.0) {
        cot = u.dot(v) >= 0.0 ? kCotClamp : -kCotClamp;
        ++n_clamped;
      } else {
        cot = u.dot(v) / cross;
        if (std::abs(cot) > kCotClamp) {
          cot = std::copysign(kCotClamp, cot);
          ++n_clamped;
        }
      }
      const double w = 0.5 * cot;
      trip.emplace_back(i, j, -w);
      trip.emplace_back(j, i, -w);
      trip.emplace_back(i, i, w);
      trip.emplace_back(j, j, w);
    }
  }
  Eigen::SparseMatrix<double> L(n, n);
  L.setFromTriplets(trip.begin(), trip.end());
  L.makeCompressed();
  if (clamped) *clamped = n_clamped;
  return L;
}

Eigen::SparseMatrix<double> temporal_operator(int frames) {
  Eigen::SparseMatrix<double> T(frames, frames);
  if (frames < 3) return T;
  std::vector<Eigen::Triplet<double>> trip;
  const double c[3] = {1.0, -2.0, 1.0};
  for (int k = 1; k + 1 < frames; ++k) {
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) trip.emplace_back(k - 1 + a, k - 1 + b, c[a] * c[b]);
    }
  }
  T.setFromTriplets(trip.begin(), trip.end());
  T.makeCompressed();
  return T;
}

void WindowPlan::validate() const {
  if (!(window_length > 0 && overlap > 0 && 2 * overlap <= window_length)) {
    throw Error(ErrorCode::Config, "window plan: 0 < overlap <= window_length / 2 required");
  }
}

std::vector<std::pair<int, int>> WindowPlan::windows(int frames) const {
  validate();
  std::vector<std::pair<int, int>> out;
  if (frames <= 0) return out;
  for (int s = 0;; s += stride()) {
    const int e = std::min(s + window_length, frames);
    out.emplace_back(s, e);
    if (e == frames) break;
  }
  return out;
}

double WindowPlan::blend(int t, int n) {
  if (n <= 1) return 1.0;
  const double x = static_cast<double>(t) / static_cast<double>(n - 1);
  return x * x * (3.0 - 2.0 * x);
}

DisplacementField solve_window(const Eigen::SparseMatrix<double>& L, const std::vector<std::vector<int>>& faces,
                               const InpaintConstraints& constraints, int first_frame, int frame_count,
                               const InpaintOptions& opts, WindowReport* report) {
  const int N = constraints.vertices;
  const int K = frame_count;
  if (L.rows() != N || L.cols() != N) throw Error(ErrorCode::InvalidArgument, "Laplacian size mismatch");
  if (first_frame < 0 || K < 1 || first_frame + K > constraints.frames) {
    throw Error(ErrorCode::InvalidArgument, "window outside the sequence");
  }
  const auto nvar = static_cast<size_t>(K) * static_cast<size_t>(N);

  // Fixed values: constraint targets, or zero for unconstrained components.
  std::vector<int> fixed(nvar, -1);  // index into entries, -2 for forced zero
  const auto lo = std::lower_bound(constraints.entries.begin(), constraints.entries.end(), first_frame,
                                   [](const DisplacementConstraint& e, int f) { return e.frame < f; });
  const auto hi = std::lower_bound(constraints.entries.begin(), constraints.entries.end(), first_frame + K,
                                   [](const DisplacementConstraint& e, int f) { return e.frame < f; });
  for (auto it = lo; it != hi; ++it) {
    fixed[static_cast<size_t>(it->frame - first_frame) * static_cast<size_t>(N) + static_cast<size_t>(it->vertex)] =
        static_cast<int>(it - constraints.entries.begin());
  }

  const auto comp = vertex_components(N, faces);
  const int n_comp = N == 0 ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
  // Constrained frames per component.
  std::vector<std::vector<char>> has(static_cast<size_t>(n_comp), std::vector<char>(static_cast<size_t>(K), 0));
  for (auto it = lo; it != hi; ++it) {
    has[static_cast<size_t>(comp[static_cast<size_t>(it->vertex)])][static_cast<size_t>(it->frame - first_frame)] = 1;
  }
  WindowReport rep;
  rep.first_frame = first_frame;
  rep.frames = K;
  std::vector<char> ridge(nvar, 0);
  std::vector<char> comp_zero(static_cast<size_t>(n_comp), 0), comp_ridge(static_cast<size_t>(n_comp), 0);
  for (int c = 0; c < n_comp; ++c) {
    const int count = static_cast<int>(std::count(has[static_cast<size_t>(c)].begin(), has[static_cast<size_t>(c)].end(), 1));
    if (count == 0) {
      comp_zero[static_cast<size_t>(c)] = 1;
      ++rep.zeroed_components;
    } else if (K >= 3 && count == 1) {
      comp_ridge[static_cast<size_t>(c)] = 1;
      ++rep.regularized_components;
    } else if (K < 3 && count < K) {
      comp_ridge[static_cast<size_t>(c)] = 1;
      ++rep.regularized_components;
    }
  }
  for (int k = 0; k < K; ++k) {
    for (int v = 0; v < N; ++v) {
      const size_t idx = static_cast<size_t>(k) * static_cast<size_t>(N) + static_cast<size_t>(v);
      const int c = comp[static_cast<size_t>(v)];
      if (fixed[idx] >= 0) continue;
      if (comp_zero[static_cast<size_t>(c)]) {
        fixed[idx] = -2;
      } else if (comp_ridge[static_cast<size_t>(c)] && (K >= 3 || !has[static_cast<size_t>(c)][static_cast<size_t>(k)])) {
        ridge[idx] = 1;
      }
    }
  }

  std::vector<int> free_index(nvar, -1);
  int n_free = 0;
  for (size_t i = 0; i < nvar; ++i) {
    if (fixed[i] == -1) free_index[i] = n_free++;
  }
  rep.free_variables = n_free;

  auto value_of = [&](size_t idx) -> Vec3 {
    return fixed[idx] >= 0 ? constraints.entries[static_cast<size_t>(fixed[idx])].target : Vec3::Zero();
  };

  DisplacementField out;
  out.frames = K;
  out.vertices = N;
  out.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nvar), 3);
  for (size_t i = 0; i < nvar; ++i) {
    if (fixed[i] != -1) out.X.row(static_cast<Eigen::Index>(i)) = value_of(i).transpose();
  }

  if (n_free > 0) {
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n_free, 3);
    auto add = [&](size_t r, size_t c, double v) {
      const int fr = free_index[r];
      if (fr < 0) return;
      const int fc = free_index[c];
      if (fc >= 0) {
        trip.emplace_back(fr, fc, v);
      } else {
        rhs.row(fr) -= v * value_of(c).transpose();
      }
    };
    for (int k = 0; k < K; ++k) {
      const size_t base = static_cast<size_t>(k) * static_cast<size_t>(N);
      for (Eigen::Index col = 0; col < L.outerSize(); ++col) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(L, col); it; ++it) {
          add(base + static_cast<size_t>(it.row()), base + static_cast<size_t>(it.col()), it.value());
        }
      }
    }
    const Eigen::SparseMatrix<double> T = temporal_operator(K);
    for (Eigen::Index col = 0; col < T.outerSize(); ++col) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(T, col); it; ++it) {
        const double v = opts.temporal_weight * it.value();
        for (int i = 0; i < N; ++i) {
          add(static_cast<size_t>(it.row()) * static_cast<size_t>(N) + static_cast<size_t>(i),
              static_cast<size_t>(it.col()) * static_cast<size_t>(N) + static_cast<size_t>(i), v);
        }
      }
    }
    double diag_scale = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) diag_scale = std::max(diag_scale, std::abs(L.coeff(i, i)));
    diag_scale = std::max(diag_scale + (K >= 3 ? 6.0 * opts.temporal_weight : 0.0), 1.0);
    for (size_t i = 0; i < nvar; ++i) {
      if (ridge[i] && free_index[i] >= 0) trip.emplace_back(free_index[i], free_index[i], 1e-10 * diag_scale);
    }
    Eigen::SparseMatrix<double> Q(n_free, n_free);
    Q.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(Q);
    if (solver.info() != Eigen::Success) {
      throw Error(ErrorCode::SingularKkt, "inpainting system factorization failed");
    }
    const Eigen::MatrixXd sol = solver.solve(rhs);
    if (solver.info() != Eigen::Success || !sol.allFinite()) {
      throw Error(ErrorCode::SingularKkt, "inpainting system solve failed");
    }
    for (size_t i = 0; i < nvar; ++i) {
      if (free_index[i] >= 0) out.X.row(static_cast<Eigen::Index>(i)) = sol.row(free_index[i]);
    }
  }
  if (report) *report = rep;
  return out;
}

DisplacementField solve_sequence(const Eigen::SparseMatrix<double>& L, const std::vector<std::vector<int>>& faces,
                                 const InpaintConstraints& constraints, const WindowPlan& plan,
                                 const InpaintOptions& opts, InpaintReport* report) {
  const auto wins = plan.windows(constraints.frames);
  InpaintReport rep;
  rep.windows.resize(wins.size());
  std::vector<DisplacementField> parts(wins.size());
  parallel_for(wins.size(), opts.workers, [&](size_t w) {
    parts[w] = solve_window(L, faces, constraints, wins[w].first, wins[w].second - wins[w].first, opts, &rep.windows[w]);
  });
  for (const auto& w : rep.windows) rep.singular = rep.singular || w.zeroed_components > 0;
  if (parts.size() == 1) {
    if (report) *report = rep;
    return std::move(parts.front());
  }
  rep.blended = true;
  const int N = constraints.vertices;
  DisplacementField out;
  out.frames = constraints.frames;
  out.vertices = N;
  out.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out.frames) * N, 3);
  for (size_t w = 0; w < wins.size(); ++w) {
    const auto [s, e] = wins[w];
    const int prev_end = w > 0 ? wins[w - 1].second : s;
    for (int f = s; f < e; ++f) {
      const auto dst = static_cast<Eigen::Index>(f) * N;
      const auto src = static_cast<Eigen::Index>(f - s) * N;
      if (f < prev_end) {
        // Overlap with the previous window: blend toward this one.
        const int n = prev_end - s;
        const double a = WindowPlan::blend(f - s, n);
        const auto cur = parts[w].X.middleRows(src, N);
        auto acc = out.X.middleRows(dst, N);
        acc = acc + a * (cur - acc);
      } else {
        out.X.middleRows(dst, N) = parts[w].X.middleRows(src, N);
      }
    }
  }
  if (report) *report = rep;
  return out;
}

double inpaint_objective(const Eigen::SparseMatrix<double>& L, const DisplacementField& field, double temporal_weight) {
  const int N = field.vertices;
  double total = 0.0;
  for (int k = 0; k < field.frames; ++k) {
    const Eigen::MatrixXd Xk = field.X.middleRows(static_cast<Eigen::Index>(k) * N, N);
    total += (Xk.transpose() * (L * Xk)).trace();
  }
  for (int k = 1; k + 1 < field.frames; ++k) {
    const Eigen::MatrixXd d = field.X.middleRows(static_cast<Eigen::Index>(k - 1) * N, N) -
                              2.0 * field.X.middleRows(static_cast<Eigen::Index>(k) * N, N) +
                              field.X.middleRows(static_cast<Eigen::Index>(k + 1) * N, N);
    total += temporal_weight * d.squaredNorm();
  }
  return total;
}

std::vector<Vec3> complete_mesh(const SkinnedBodyModel& model, const DisplacementField& field, int frame) {
  if (field.vertices != model.n_vertices() || frame < 0 || frame >= field.frames) {
    throw Error(ErrorCode::InvalidArgument, "displacement field does not match the model");
  }
  std::vector<Vec3> d(static_cast<size_t>(field.vertices));
  for (int i = 0; i < field.vertices; ++i) d[static_cast<size_t>(i)] = field.at(frame, i);
  return skin_all(model, model.poses.at(static_cast<size_t>(frame)), &d);
}

void write_animation(const std::string& path, const std::vector<std::vector<Vec3>>& frames) {
  const size_t N = frames.empty() ? 0 : frames.front().size();
  std::vector<float> data;
  data.reserve(frames.size() * N * 3);
  for (const auto& f : frames) {
    if (f.size() != N) throw Error(ErrorCode::InvalidArgument, "animation frames differ in vertex count");
    for (const auto& p : f) {
      data.push_back(static_cast<float>(p.x()));
      data.push_back(static_cast<float>(p.y()));
      data.push_back(static_cast<float>(p.z()));
    }
  }
  const nlohmann::json header = {{"K", frames.size()}, {"N", N}, {"dtype", "float32"}, {"endian", "little"},
                                 {"order", "frame,vertex,xyz"}};
  write_binary_file(path, header.dump() + "\n", data.data(), data.size() * sizeof(float));
}

}  // namespace mocap
