#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mocap {

inline constexpr const char* kDefaultAlphabet = "1234567ABCDEFGJKLMPQRTUVY";

struct CodeAlphabet {
  std::string symbols = kDefaultAlphabet;

  size_t size() const { return symbols.size(); }
  bool contains(char c) const { return symbols.find(c) != std::string::npos; }
};

/// One two-letter code square: its corners clockwise from the top-left of
/// the upright code.
struct CodeQuad {
  std::string code;
  std::array<int, 4> corners{};
};

/// Rectangular corner grid of one suit panel, as produced by the synthetic
/// generator. Corner (row, col) has id first_corner + row * cols + col.
struct LayoutPatch {
  int first_corner = 0;
  int rows = 0;
  int cols = 0;
  bool wrapped = false;
  int cap_start = -1;  // hole-closing vertex ids, -1 when absent
  int cap_end = -1;

  int corner(int row, int col) const { return first_corner + row * cols + col; }
};

class SuitLayout {
 public:
  SuitLayout() = default;
  SuitLayout(int n_corners, std::vector<CodeQuad> quads, std::vector<std::vector<int>> faces,
             int extra_vertices = 0);

  int n_corners() const { return n_corners_; }
  int extra_vertices() const { return extra_vertices_; }
  int n_vertices() const { return n_corners_ + extra_vertices_; }
  bool never_observed(int vertex) const { return vertex >= n_corners_; }

  const std::vector<CodeQuad>& quads() const { return quads_; }
  const std::vector<std::vector<int>>& faces() const { return faces_; }
  const std::vector<LayoutPatch>& patches() const { return patches_; }
  void set_patches(std::vector<LayoutPatch> patches) { patches_ = std::move(patches); }

  /// Index into quads() or -1.
  int code_index(const std::string& code) const;

  /// l(code, i_q) with i_q in 1..4. Throws UnknownCode / BadCornerIndex.
  int label(const std::string& code, int corner_index) const;

  /// Codes whose quad contains `corner`. Throws UnknownCorner.
  std::vector<std::string> adjacent_codes(int corner) const;
  const std::vector<int>& adjacent_code_indices(int corner) const;

  /// True when every undirected edge is shared by at most two faces.
  bool is_edge_manifold() const;

 private:
  void build_index();

  int n_corners_ = 0;
  int extra_vertices_ = 0;
  std::vector<CodeQuad> quads_;
  std::vector<std::vector<int>> faces_;
  std::vector<LayoutPatch> patches_;
  std::unordered_map<std::string, int> code_index_;
  std::vector<std::vector<int>> corner_codes_;
};

struct TubeGrid {
  int n_strips = 1;
  int codes_per_strip = 1;
};

/// Cylinder-topology checkerboard: 2 * codes_per_strip corner columns
/// (wrapping when codes_per_strip >= 2) and n_strips + 1 rows. Codes are
/// alphabet pairs, shuffled when seed != 0. Throws AlphabetExhausted.
SuitLayout generate_synthetic_layout(int n_strips, int codes_per_strip,
                                     const CodeAlphabet& alphabet = {}, std::uint64_t seed = 0);

/// Several independent tube panels in one layout. With close_ends, each
/// wrapped tube gets two hole-closing vertices joined by triangle fans.
SuitLayout generate_tube_layout(const std::vector<TubeGrid>& tubes, const CodeAlphabet& alphabet,
                                std::uint64_t seed, bool close_ends);

/// Layout file: {n_corners, codes:[{code, corners:[4]}], faces:[[ids]], extra_vertices}.
SuitLayout parse_layout(const std::string& json_text);
SuitLayout load_layout(const std::string& path);
std::string serialize_layout(const SuitLayout& layout);

}  // namespace mocap
