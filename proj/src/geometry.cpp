#include "pifukit/geometry.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <unordered_map>

namespace pifukit {

// Uniform (x, y) bucket grid over the mesh footprint. Each face is listed in
// every cell its projected bounding box overlaps.
class ZRayIndex {
 public:
  ZRayIndex(const std::vector<Vec3>& vertices, const std::vector<Face>& faces, const Aabb& box) {
    if (faces.empty()) return;
    x0_ = box.lo.x;
    y0_ = box.lo.y;
    x1_ = box.hi.x;
    y1_ = box.hi.y;
    const auto side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(faces.size()) / 2.0)));
    nx_ = ny_ = std::clamp(side, 1, 1024);
    cw_ = std::max((x1_ - x0_) / nx_, 1e-12);
    ch_ = std::max((y1_ - y0_) / ny_, 1e-12);

    std::vector<std::uint32_t> counts(static_cast<std::size_t>(nx_) * ny_ + 1, 0);
    auto for_cells = [&](const Face& f, auto&& visit) {
      double lx = vertices[f[0]].x, hx = lx, ly = vertices[f[0]].y, hy = ly;
      for (int k = 1; k < 3; ++k) {
        lx = std::min(lx, vertices[f[k]].x);
        hx = std::max(hx, vertices[f[k]].x);
        ly = std::min(ly, vertices[f[k]].y);
        hy = std::max(hy, vertices[f[k]].y);
      }
      const int ix0 = cell_x(lx), ix1 = cell_x(hx), iy0 = cell_y(ly), iy1 = cell_y(hy);
      for (int iy = iy0; iy <= iy1; ++iy)
        for (int ix = ix0; ix <= ix1; ++ix) visit(static_cast<std::size_t>(iy) * nx_ + ix);
    };
    for (const auto& f : faces) for_cells(f, [&](std::size_t c) { ++counts[c + 1]; });
    std::partial_sum(counts.begin(), counts.end(), counts.begin());
    start_ = counts;
    items_.resize(start_.back());
    std::vector<std::uint32_t> cursor(start_.begin(), start_.end() - 1);
    for (std::uint32_t fi = 0; fi < faces.size(); ++fi)
      for_cells(faces[fi], [&](std::size_t c) { items_[cursor[c]++] = fi; });
  }

  std::span<const std::uint32_t> candidates(double x, double y) const {
    if (items_.empty() || !(x >= x0_ && x <= x1_ && y >= y0_ && y <= y1_)) return {};
    const std::size_t c = static_cast<std::size_t>(cell_y(y)) * nx_ + cell_x(x);
    return {items_.data() + start_[c], items_.data() + start_[c + 1]};
  }

 private:
  int cell_x(double x) const { return std::clamp(static_cast<int>(std::floor((x - x0_) / cw_)), 0, nx_ - 1); }
  int cell_y(double y) const { return std::clamp(static_cast<int>(std::floor((y - y0_) / ch_)), 0, ny_ - 1); }

  double x0_ = 0, y0_ = 0, x1_ = -1, y1_ = -1, cw_ = 1, ch_ = 1;
  int nx_ = 1, ny_ = 1;
  std::vector<std::uint32_t> start_, items_;
};

namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

std::uint64_t vertex_key(std::uint32_t v) { return (static_cast<std::uint64_t>(v) << 32) | 0xffffffffULL; }

}  // namespace

TriMesh::TriMesh() : zindex_(std::make_shared<ZRayIndex>(vertices_, faces_, bbox_)) {}

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::vector<int> face_part_labels)
    : vertices_(std::move(vertices)), faces_(std::move(faces)), labels_(std::move(face_part_labels)) {
  if (labels_.empty()) labels_.assign(faces_.size(), 0);
  if (labels_.size() != faces_.size())
    throw ShapeMismatch("face_part_labels has " + std::to_string(labels_.size()) + " entries for " +
                        std::to_string(faces_.size()) + " faces");
  for (const auto& f : faces_)
    for (auto i : f)
      if (i >= vertices_.size())
        throw ParseError("face index " + std::to_string(i) + " out of range (" +
                         std::to_string(vertices_.size()) + " vertices)");
  for (const auto& v : vertices_) bbox_.expand(v);
  zindex_ = std::make_shared<ZRayIndex>(vertices_, faces_, bbox_);
}

Vec3 TriMesh::face_normal(std::size_t f) const {
  const auto& [a, b, c] = faces_[f];
  return normalized(cross(vertices_[b] - vertices_[a], vertices_[c] - vertices_[a]));
}

double TriMesh::face_area(std::size_t f) const {
  const auto& [a, b, c] = faces_[f];
  return 0.5 * norm(cross(vertices_[b] - vertices_[a], vertices_[c] - vertices_[a]));
}

double TriMesh::surface_area() const {
  double s = 0;
  for (std::size_t f = 0; f < faces_.size(); ++f) s += face_area(f);
  return s;
}

double TriMesh::signed_volume() const {
  double v = 0;
  for (const auto& [a, b, c] : faces_) v += dot(vertices_[a], cross(vertices_[b], vertices_[c]));
  return v / 6.0;
}

bool TriMesh::is_watertight() const {
  if (faces_.empty()) return false;
  std::unordered_map<std::uint64_t, int> uses;
  uses.reserve(faces_.size() * 3);
  for (const auto& f : faces_)
    for (int k = 0; k < 3; ++k) ++uses[edge_key(f[k], f[(k + 1) % 3])];
  return std::all_of(uses.begin(), uses.end(), [](const auto& kv) { return kv.second == 2; });
}

bool TriMesh::is_consistently_oriented() const {
  std::unordered_map<std::uint64_t, int> directed;
  directed.reserve(faces_.size() * 3);
  for (const auto& f : faces_)
    for (int k = 0; k < 3; ++k) {
      const auto key = (static_cast<std::uint64_t>(f[k]) << 32) | f[(k + 1) % 3];
      if (++directed[key] > 1) return false;
    }
  return true;
}

void TriMesh::require_watertight() const {
  if (faces_.empty()) throw EmptyMesh("mesh has no faces");
  std::unordered_map<std::uint64_t, int> uses;
  for (const auto& f : faces_)
    for (int k = 0; k < 3; ++k) ++uses[edge_key(f[k], f[(k + 1) % 3])];
  for (const auto& [key, count] : uses)
    if (count != 2)
      throw NotWatertight("edge (" + std::to_string(key >> 32) + ", " + std::to_string(key & 0xffffffffULL) +
                          ") is shared by " + std::to_string(count) + " faces");
}

std::vector<ZHit> TriMesh::ray_hits_z(double x, double y) const {
  std::vector<ZHit> hits;
  struct Boundary {
    std::uint64_t key;
    ZHit hit;
  };
  std::vector<Boundary> boundary;

  for (std::uint32_t fi : zindex_->candidates(x, y)) {
    const auto& [ia, ib, ic] = faces_[fi];
    const Vec3& a = vertices_[ia];
    const Vec3& b = vertices_[ib];
    const Vec3& c = vertices_[ic];
    // Vertex coordinates relative to the line; each 2D edge function is then
    // evaluated with bitwise-identical operands from both adjacent faces.
    const double ax = a.x - x, ay = a.y - y;
    const double bx = b.x - x, by = b.y - y;
    const double cx = c.x - x, cy = c.y - y;
    const double e0 = bx * cy - by * cx;  // edge b->c, opposite a
    const double e1 = cx * ay - cy * ax;  // edge c->a, opposite b
    const double e2 = ax * by - ay * bx;  // edge a->b, opposite c
    const bool any_neg = e0 < 0 || e1 < 0 || e2 < 0;
    const bool any_pos = e0 > 0 || e1 > 0 || e2 > 0;
    if (any_neg && any_pos) continue;
    const double det = e0 + e1 + e2;
    if (det == 0) continue;

    ZHit hit{(e0 * a.z + e1 * b.z + e2 * c.z) / det, face_normal(fi), fi, labels_[fi]};
    const int zeros = (e0 == 0) + (e1 == 0) + (e2 == 0);
    if (zeros == 0) {
      hits.push_back(hit);
      continue;
    }
    std::uint64_t key;
    if (zeros == 1)
      key = e0 == 0 ? edge_key(ib, ic) : (e1 == 0 ? edge_key(ic, ia) : edge_key(ia, ib));
    else
      key = e0 != 0 ? vertex_key(ia) : (e1 != 0 ? vertex_key(ib) : vertex_key(ic));
    boundary.push_back({key, hit});
  }

  if (!boundary.empty()) {
    std::sort(boundary.begin(), boundary.end(), [](const Boundary& l, const Boundary& r) {
      return l.key != r.key ? l.key < r.key : l.hit.face_id < r.hit.face_id;
    });
    for (std::size_t i = 0; i < boundary.size(); ++i)
      if (i == 0 || boundary[i].key != boundary[i - 1].key) hits.push_back(boundary[i].hit);
  }
  std::sort(hits.begin(), hits.end(),
            [](const ZHit& l, const ZHit& r) { return l.t != r.t ? l.t < r.t : l.face_id < r.face_id; });
  return hits;
}

std::vector<ZHit> ray_hits_z(const TriMesh& mesh, double x, double y) { return mesh.ray_hits_z(x, y); }

bool is_inside(const TriMesh& mesh, const Vec3& p) {
  double x = p.x;
  std::vector<ZHit> hits = mesh.ray_hits_z(x, p.y);
  for (int attempt = 0; attempt < 16 && hits.size() % 2 == 1; ++attempt) {
    x += 1e-7;
    hits = mesh.ray_hits_z(x, p.y);
  }
  const auto above = std::count_if(hits.begin(), hits.end(), [&](const ZHit& h) { return h.t > p.z; });
  return above % 2 == 1;
}

double signed_z_distance(const TriMesh& mesh, const Vec3& p) {
  const auto hits = mesh.ray_hits_z(p.x, p.y);
  if (hits.empty())
    throw NoSurfaceOnRay("vertical line through (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                         ") misses the mesh");
  double d = std::numeric_limits<double>::infinity();
  for (const auto& h : hits) d = std::min(d, std::abs(h.t - p.z));
  if (d == 0) return 0.0;
  return is_inside(mesh, p) ? d : -d;
}

std::vector<SurfaceSample> sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) throw EmptyMesh("cannot sample an empty mesh");
  std::vector<double> cumulative(mesh.face_count());
  double total = 0;
  for (std::size_t f = 0; f < mesh.face_count(); ++f) cumulative[f] = (total += mesh.face_area(f));
  if (!(total > 0)) throw EmptyMesh("mesh has zero surface area");

  const std::uint64_t stream_seed = salted(seed, StreamSalt::SurfaceSample);
  std::vector<SurfaceSample> out(n);
  parallel_for(n, 4096, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      StreamRng rng(stream_seed, i);
      const double pick = rng.uniform() * total;
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
      if (it == cumulative.end()) --it;
      const auto fi = static_cast<std::uint32_t>(it - cumulative.begin());
      const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
      const auto& [ia, ib, ic] = mesh.faces()[fi];
      const auto& v = mesh.vertices();
      out[i].point = v[ia] * (1 - r1) + v[ib] * (r1 * (1 - r2)) + v[ic] * (r1 * r2);
      out[i].normal = mesh.face_normal(fi);
      out[i].part_label = mesh.face_part_labels()[fi];
      out[i].face_id = fi;
    }
  });
  return out;
}

// --- OBJ ----------------------------------------------------------------------

namespace {

double parse_double(std::string_view token, std::size_t line_no) {
  double value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + std::string(token) + "'");
  return value;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t b = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > b) out.push_back(line.substr(b, i - b));
  }
  return out;
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace

TriMesh parse_obj(const std::string& text) {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<int> labels;
  int label = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError("line " + std::to_string(line_no) + ": vertex needs 3 coordinates");
      vertices.push_back({parse_double(tok[1], line_no), parse_double(tok[2], line_no), parse_double(tok[3], line_no)});
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError("line " + std::to_string(line_no) + ": face needs >= 3 vertices");
      std::vector<std::uint32_t> idx;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        const auto head = tok[k].substr(0, tok[k].find('/'));
        long value = 0;
        auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), value);
        if (ec != std::errc() || ptr != head.data() + head.size() || value == 0)
          throw ParseError("line " + std::to_string(line_no) + ": bad face index '" + std::string(tok[k]) + "'");
        const long resolved = value > 0 ? value - 1 : static_cast<long>(vertices.size()) + value;
        if (resolved < 0 || resolved >= static_cast<long>(vertices.size()))
          throw ParseError("line " + std::to_string(line_no) + ": face index out of range");
        idx.push_back(static_cast<std::uint32_t>(resolved));
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        faces.push_back({idx[0], idx[k], idx[k + 1]});
        labels.push_back(label);
      }
    } else if (tok[0] == "g") {
      label = 0;
      if (tok.size() >= 2 && tok[1].starts_with("part_")) {
        const auto digits = tok[1].substr(5);
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), label);
        if (ec != std::errc() || ptr != digits.data() + digits.size())
          throw ParseError("line " + std::to_string(line_no) + ": bad part group '" + std::string(tok[1]) + "'");
      }
    }
  }
  if (faces.empty()) throw EmptyMesh("OBJ contains no faces");
  return TriMesh(std::move(vertices), std::move(faces), std::move(labels));
}

TriMesh load_mesh(const std::filesystem::path& path, bool normalize) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mesh '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  TriMesh mesh = parse_obj(buf.str());
  mesh.require_watertight();
  return normalize ? normalized(mesh) : mesh;
}

std::string to_obj(const TriMesh& mesh) {
  std::string out;
  out.reserve(mesh.vertex_count() * 40 + mesh.face_count() * 24);
  for (const auto& v : mesh.vertices()) {
    out += "v ";
    append_double(out, v.x);
    out += ' ';
    append_double(out, v.y);
    out += ' ';
    append_double(out, v.z);
    out += '\n';
  }
  bool first = true;
  int current = 0;
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    const int label = mesh.face_part_labels()[f];
    if (first || label != current) {
      out += "g part_" + std::to_string(label) + "\n";
      current = label;
      first = false;
    }
    const auto& [a, b, c] = mesh.faces()[f];
    out += "f " + std::to_string(a + 1) + ' ' + std::to_string(b + 1) + ' ' + std::to_string(c + 1) + '\n';
  }
  return out;
}

void save_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mesh '" + path.string() + "'");
  out << to_obj(mesh);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TriMesh normalized(const TriMesh& mesh) {
  if (mesh.empty()) throw EmptyMesh("cannot normalize an empty mesh");
  const Vec3 c = mesh.bbox().center();
  const Vec3 e = mesh.bbox().extent() * 0.5;
  const double half = std::max({e.x, e.y, e.z});
  const double s = half > 0 ? 0.95 / half : 1.0;
  std::vector<Vec3> v;
  v.reserve(mesh.vertex_count());
  for (const auto& p : mesh.vertices()) v.push_back((p - c) * s);
  return TriMesh(std::move(v), mesh.faces(), mesh.face_part_labels());
}

TriMesh transformed(const TriMesh& mesh, const Mat3& rotation, const Vec3& translation) {
  std::vector<Vec3> v;
  v.reserve(mesh.vertex_count());
  for (const auto& p : mesh.vertices()) v.push_back(rotation * p + translation);
  return TriMesh(std::move(v), mesh.faces(), mesh.face_part_labels());
}

TriMesh merge(const std::vector<TriMesh>& parts) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  std::vector<int> l;
  for (const auto& part : parts) {
    const auto offset = static_cast<std::uint32_t>(v.size());
    v.insert(v.end(), part.vertices().begin(), part.vertices().end());
    for (const auto& face : part.faces()) f.push_back({face[0] + offset, face[1] + offset, face[2] + offset});
    l.insert(l.end(), part.face_part_labels().begin(), part.face_part_labels().end());
  }
  return TriMesh(std::move(v), std::move(f), std::move(l));
}

// --- closest point ----------------------------------------------------------------

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {

double box_squared_distance(const Aabb& box, const Vec3& p) {
  double d = 0;
  for (int k = 0; k < 3; ++k) {
    const double v = p[k];
    if (v < box.lo[k]) d += (box.lo[k] - v) * (box.lo[k] - v);
    else if (v > box.hi[k]) d += (v - box.hi[k]) * (v - box.hi[k]);
  }
  return d;
}

}  // namespace

SurfaceDistanceIndex::SurfaceDistanceIndex(const TriMesh& mesh) {
  if (mesh.empty()) throw EmptyMesh("distance index over an empty mesh");
  tris_.reserve(mesh.face_count());
  std::vector<Vec3> centroids;
  centroids.reserve(mesh.face_count());
  for (const auto& [a, b, c] : mesh.faces()) {
    tris_.push_back({mesh.vertices()[a], mesh.vertices()[b], mesh.vertices()[c]});
    centroids.push_back((tris_.back()[0] + tris_.back()[1] + tris_.back()[2]) / 3.0);
  }
  order_.resize(tris_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * tris_.size() / 4 + 2);
  build(0, static_cast<std::uint32_t>(tris_.size()), centroids);
}

std::uint32_t SurfaceDistanceIndex::build(std::uint32_t first, std::uint32_t count, std::vector<Vec3>& centroids) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  Aabb box, cbox;
  for (std::uint32_t i = first; i < first + count; ++i) {
    for (const auto& v : tris_[order_[i]]) box.expand(v);
    cbox.expand(centroids[order_[i]]);
  }
  nodes_[id].box = box;
  if (count <= 4) {
    nodes_[id].first = first;
    nodes_[id].count = count;
    return id;
  }
  const Vec3 ext = cbox.extent();
  const int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
  const std::uint32_t mid = first + count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](std::uint32_t l, std::uint32_t r) {
                     return centroids[l][axis] != centroids[r][axis] ? centroids[l][axis] < centroids[r][axis] : l < r;
                   });
  const std::uint32_t left = build(first, mid - first, centroids);
  const std::uint32_t right = build(mid, first + count - mid, centroids);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double SurfaceDistanceIndex::squared_distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (box_squared_distance(node.box, p) >= best) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const auto& t = tris_[order_[i]];
        const Vec3 q = closest_point_on_triangle(p, t[0], t[1], t[2]);
        best = std::min(best, dot(p - q, p - q));
      }
      continue;
    }
    const double dl = box_squared_distance(nodes_[node.left].box, p);
    const double dr = box_squared_distance(nodes_[node.right].box, p);
    if (dl < dr) {
      stack[top++] = node.right;
      stack[top++] = node.left;
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
  return best;
}

}  // namespace pifukit
