#include "core/suit_layout.hpp"

#include "core/error.hpp"
#include "core/io_util.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace mocap {

SuitLayout::SuitLayout(int n_corners, std::vector<CodeQuad> quads,
                       std::vector<std::vector<int>> faces, int extra_vertices)
    : n_corners_(n_corners),
      extra_vertices_(extra_vertices),
      quads_(std::move(quads)),
      faces_(std::move(faces)) {
  if (n_corners_ < 0 || extra_vertices_ < 0) {
    throw Error(ErrorCode::InvalidArgument, "negative corner or vertex count");
  }
  build_index();
}

void SuitLayout::build_index() {
  code_index_.clear();
  corner_codes_.assign(static_cast<size_t>(n_corners_), {});
  for (size_t q = 0; q < quads_.size(); ++q) {
    const auto& quad = quads_[q];
    if (quad.code.size() != 2) {
      throw Error(ErrorCode::InvalidArgument, "code '" + quad.code + "' is not two letters");
    }
    if (!code_index_.emplace(quad.code, static_cast<int>(q)).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate code " + quad.code);
    }
    for (int a = 0; a < 4; ++a) {
      const int id = quad.corners[static_cast<size_t>(a)];
      if (id < 0 || id >= n_corners_) {
        throw Error(ErrorCode::InvalidArgument, "code " + quad.code + " references corner " +
                                                    std::to_string(id) + " out of range");
      }
      for (int b = a + 1; b < 4; ++b) {
        if (quad.corners[static_cast<size_t>(b)] == id) {
          throw Error(ErrorCode::InvalidArgument, "code " + quad.code + " repeats a corner");
        }
      }
      corner_codes_[static_cast<size_t>(id)].push_back(static_cast<int>(q));
    }
  }
  for (const auto& face : faces_) {
    if (face.size() < 3) throw Error(ErrorCode::InvalidArgument, "face with fewer than 3 vertices");
    for (int v : face) {
      if (v < 0 || v >= n_vertices()) {
        throw Error(ErrorCode::InvalidArgument, "face references vertex " + std::to_string(v));
      }
    }
  }
}

int SuitLayout::code_index(const std::string& code) const {
  const auto it = code_index_.find(code);
  return it == code_index_.end() ? -1 : it->second;
}

int SuitLayout::label(const std::string& code, int corner_index) const {
  const int q = code_index(code);
  if (q < 0) throw Error(ErrorCode::UnknownCode, "unknown code '" + code + "'");
  if (corner_index < 1 || corner_index > 4) {
    throw Error(ErrorCode::BadCornerIndex, "corner index must be in 1..4, got " + std::to_string(corner_index));
  }
  return quads_[static_cast<size_t>(q)].corners[static_cast<size_t>(corner_index - 1)];
}

const std::vector<int>& SuitLayout::adjacent_code_indices(int corner) const {
  if (corner < 0 || corner >= n_corners_) {
    throw Error(ErrorCode::UnknownCorner, "unknown corner " + std::to_string(corner));
  }
  return corner_codes_[static_cast<size_t>(corner)];
}

std::vector<std::string> SuitLayout::adjacent_codes(int corner) const {
  std::vector<std::string> out;
  for (int q : adjacent_code_indices(corner)) out.push_back(quads_[static_cast<size_t>(q)].code);
  return out;
}

bool SuitLayout::is_edge_manifold() const {
  std::map<std::pair<int, int>, int> uses;
  for (const auto& face : faces_) {
    for (size_t i = 0; i < face.size(); ++i) {
      int a = face[i], b = face[(i + 1) % face.size()];
      if (a > b) std::swap(a, b);
      if (++uses[{a, b}] > 2) return false;
    }
  }
  return true;
}

namespace {

std::vector<std::string> code_pool(const CodeAlphabet& alphabet, size_t needed, std::uint64_t seed) {
  const size_t n = alphabet.size();
  if (needed > n * n) {
    throw Error(ErrorCode::AlphabetExhausted, "need " + std::to_string(needed) + " codes but the alphabet yields " +
                                                  std::to_string(n * n));
  }
  std::vector<std::string> pool;
  pool.reserve(n * n);
  for (char a : alphabet.symbols)
    for (char b : alphabet.symbols) pool.push_back(std::string{a, b});
  if (seed != 0) {
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
  }
  pool.resize(needed);
  return pool;
}

}  // namespace

SuitLayout generate_tube_layout(const std::vector<TubeGrid>& tubes, const CodeAlphabet& alphabet,
                                std::uint64_t seed, bool close_ends) {
  size_t total_codes = 0;
  for (const auto& t : tubes) {
    if (t.n_strips < 1 || t.codes_per_strip < 1) {
      throw Error(ErrorCode::InvalidArgument, "tube needs at least one strip and one code");
    }
    total_codes += static_cast<size_t>(t.n_strips) * static_cast<size_t>(t.codes_per_strip);
  }
  const auto codes = code_pool(alphabet, total_codes, seed);

  std::vector<LayoutPatch> patches;
  std::vector<CodeQuad> quads;
  std::vector<std::vector<int>> faces;
  int next_corner = 0;
  for (const auto& t : tubes) {
    LayoutPatch p;
    p.first_corner = next_corner;
    p.rows = t.n_strips + 1;
    p.cols = 2 * t.codes_per_strip;
    p.wrapped = t.codes_per_strip >= 2;
    next_corner += p.rows * p.cols;
    patches.push_back(p);
  }
  int next_extra = next_corner;
  size_t code_cursor = 0;
  for (auto& p : patches) {
    const int square_cols = p.wrapped ? p.cols : p.cols - 1;
    for (int s = 0; s + 1 < p.rows; ++s) {
      for (int c = 0; c < square_cols; ++c) {
        const int c1 = (c + 1) % p.cols;
        const int tl = p.corner(s, c), tr = p.corner(s, c1);
        const int br = p.corner(s + 1, c1), bl = p.corner(s + 1, c);
        // Mesh faces are counter-clockwise seen from outside.
        faces.push_back({tl, bl, br, tr});
        const bool white = p.wrapped ? ((c + s) % 2 == 0) : (c % 2 == 0);
        if (white) quads.push_back({codes[code_cursor++], {tl, tr, br, bl}});
      }
    }
    if (close_ends && p.wrapped) {
      p.cap_start = next_extra++;
      p.cap_end = next_extra++;
      const int last = p.rows - 1;
      for (int c = 0; c < p.cols; ++c) {
        const int c1 = (c + 1) % p.cols;
        faces.push_back({p.cap_start, p.corner(0, c), p.corner(0, c1)});
        faces.push_back({p.cap_end, p.corner(last, c1), p.corner(last, c)});
      }
    }
  }
  SuitLayout layout(next_corner, std::move(quads), std::move(faces), next_extra - next_corner);
  layout.set_patches(std::move(patches));
  return layout;
}

SuitLayout generate_synthetic_layout(int n_strips, int codes_per_strip, const CodeAlphabet& alphabet,
                                     std::uint64_t seed) {
  return generate_tube_layout({TubeGrid{n_strips, codes_per_strip}}, alphabet, seed, false);
}

SuitLayout parse_layout(const std::string& json_text) {
  using nlohmann::json;
  try {
    const json doc = json::parse(json_text);
    std::vector<CodeQuad> quads;
    for (const auto& jc : doc.at("codes")) {
      const auto corners = jc.at("corners").get<std::vector<int>>();
      if (corners.size() != 4) throw Error(ErrorCode::Config, "code quad must list 4 corners");
      quads.push_back({jc.at("code").get<std::string>(), {corners[0], corners[1], corners[2], corners[3]}});
    }
    auto faces = doc.at("faces").get<std::vector<std::vector<int>>>();
    const int extra = doc.value("extra_vertices", 0);
    SuitLayout layout(doc.at("n_corners").get<int>(), std::move(quads), std::move(faces), extra);
    if (doc.contains("patches")) {
      std::vector<LayoutPatch> patches;
      for (const auto& jp : doc.at("patches")) {
        LayoutPatch p;
        p.first_corner = jp.at("first").get<int>();
        p.rows = jp.at("rows").get<int>();
        p.cols = jp.at("cols").get<int>();
        p.wrapped = jp.at("wrapped").get<bool>();
        p.cap_start = jp.value("cap_start", -1);
        p.cap_end = jp.value("cap_end", -1);
        patches.push_back(p);
      }
      layout.set_patches(std::move(patches));
    }
    return layout;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed layout: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    throw Error(ErrorCode::Config, std::string("invalid layout: ") + e.what());
  }
}

SuitLayout load_layout(const std::string& path) { return parse_layout(read_text_file(path)); }

std::string serialize_layout(const SuitLayout& layout) {
  using nlohmann::json;
  json codes = json::array();
  for (const auto& q : layout.quads()) codes.push_back({{"code", q.code}, {"corners", q.corners}});
  json doc = {{"n_corners", layout.n_corners()},
              {"codes", std::move(codes)},
              {"faces", layout.faces()},
              {"extra_vertices", layout.extra_vertices()}};
  if (!layout.patches().empty()) {
    json patches = json::array();
    for (const auto& p : layout.patches()) {
      patches.push_back({{"first", p.first_corner},
                         {"rows", p.rows},
                         {"cols", p.cols},
                         {"wrapped", p.wrapped},
                         {"cap_start", p.cap_start},
                         {"cap_end", p.cap_end}});
    }
    doc["patches"] = std::move(patches);
  }
  return doc.dump() + "\n";
}

}  // namespace mocap
