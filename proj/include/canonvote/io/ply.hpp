#pragma once

// PLY point clouds: ascii and binary_little_endian readers, writer with
// optional per-point instance ids, and a vote-map export of a grid.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "canonvote/gridvote.hpp"
#include "canonvote/point_cloud.hpp"

namespace canonvote::io {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

struct PlyData {
  PointCloud cloud;
  /// Per-point "instance" property, when present.
  std::optional<std::vector<int>> instance;
};

namespace detail {

enum class PlyType { kInt8, kUint8, kInt16, kUint16, kInt32, kUint32, kFloat32, kFloat64 };

inline std::optional<PlyType> parse_ply_type(const std::string& s) {
  if (s == "char" || s == "int8") return PlyType::kInt8;
  if (s == "uchar" || s == "uint8") return PlyType::kUint8;
  if (s == "short" || s == "int16") return PlyType::kInt16;
  if (s == "ushort" || s == "uint16") return PlyType::kUint16;
  if (s == "int" || s == "int32") return PlyType::kInt32;
  if (s == "uint" || s == "uint32") return PlyType::kUint32;
  if (s == "float" || s == "float32") return PlyType::kFloat32;
  if (s == "double" || s == "float64") return PlyType::kFloat64;
  return std::nullopt;
}

inline std::size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::kInt8:
    case PlyType::kUint8: return 1;
    case PlyType::kInt16:
    case PlyType::kUint16: return 2;
    case PlyType::kInt32:
    case PlyType::kUint32:
    case PlyType::kFloat32: return 4;
    case PlyType::kFloat64: return 8;
  }
  return 0;
}

template <typename T>
double load_as_double(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return static_cast<double>(v);
}

inline double decode(PlyType t, const char* p) {
  switch (t) {
    case PlyType::kInt8: return load_as_double<std::int8_t>(p);
    case PlyType::kUint8: return load_as_double<std::uint8_t>(p);
    case PlyType::kInt16: return load_as_double<std::int16_t>(p);
    case PlyType::kUint16: return load_as_double<std::uint16_t>(p);
    case PlyType::kInt32: return load_as_double<std::int32_t>(p);
    case PlyType::kUint32: return load_as_double<std::uint32_t>(p);
    case PlyType::kFloat32: return load_as_double<float>(p);
    case PlyType::kFloat64: return load_as_double<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kFloat32;
  std::size_t offset = 0;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
  std::size_t stride = 0;
  bool has_list = false;

  int find(const std::string& n) const {
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (props[i].name == n) return static_cast<int>(i);
    }
    return -1;
  }
};

[[noreturn]] inline void ply_fail(std::size_t offset, const std::string& what) {
  throw InputError("PLY: " + what + " (at byte " + std::to_string(offset) + ")");
}

inline std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

inline std::uint8_t to_channel(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace detail

/// Parses a PLY stream. Only the "vertex" element is loaded; it needs x, y
/// and z and may carry red/green/blue and "instance". Elements before the
/// vertex block must have fixed-size records.
inline PlyData read_ply(std::istream& in) {
  using namespace detail;
  std::size_t offset = 0;
  std::string line;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    offset += line.size() + 1;
    line = trim_cr(line);
    return true;
  };

  if (!next_line() || line != "ply") ply_fail(0, "missing 'ply' magic");
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const std::size_t line_start = offset;
    if (!next_line()) ply_fail(offset, "unexpected end of header");
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") {
        binary = false;
      } else if (fmt == "binary_little_endian") {
        binary = true;
      } else {
        ply_fail(line_start, "unsupported format '" + fmt + "'");
      }
      have_format = true;
    } else if (kw == "element") {
      PlyElement e;
      long long count = -1;
      ls >> e.name >> count;
      if (!ls || count < 0) ply_fail(line_start, "malformed element line '" + line + "'");
      e.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (elements.empty()) ply_fail(line_start, "property before any element");
      PlyElement& e = elements.back();
      std::string type_name;
      ls >> type_name;
      if (type_name == "list") {
        e.has_list = true;
        std::string a, b, name;
        ls >> a >> b >> name;
        e.props.push_back({name, PlyType::kUint8, 0});
        continue;
      }
      std::string name;
      ls >> name;
      const auto t = parse_ply_type(type_name);
      if (!t || name.empty()) ply_fail(line_start, "malformed property line '" + line + "'");
      e.props.push_back({name, *t, e.stride});
      e.stride += ply_type_size(*t);
    } else {
      ply_fail(line_start, "unknown header keyword '" + kw + "'");
    }
  }
  if (!have_format) ply_fail(offset, "header has no format line");

  std::size_t vi = elements.size();
  for (std::size_t i = 0; i < elements.size(); ++i) {
    if (elements[i].name == "vertex") {
      vi = i;
      break;
    }
  }
  if (vi == elements.size()) ply_fail(offset, "no vertex element");
  const PlyElement& v = elements[vi];
  if (v.has_list) ply_fail(offset, "vertex element must not contain list properties");
  const int ix = v.find("x"), iy = v.find("y"), iz = v.find("z");
  if (ix < 0 || iy < 0 || iz < 0) ply_fail(offset, "vertex element lacks x, y or z");
  const int ir = v.find("red"), ig = v.find("green"), ib = v.find("blue");
  const bool has_rgb = ir >= 0 && ig >= 0 && ib >= 0;
  const int ii = v.find("instance");

  PlyData out;
  out.cloud.positions.resize(v.count);
  if (has_rgb) out.cloud.colors.emplace(v.count);
  if (ii >= 0) out.instance.emplace(v.count);
  auto store = [&](std::size_t k, const std::vector<double>& vals) {
    out.cloud.positions[k] = Vec3(vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
                                  vals[static_cast<std::size_t>(iz)]);
    if (!out.cloud.positions[k].allFinite()) ply_fail(offset, "non-finite coordinate in vertex " + std::to_string(k));
    if (has_rgb) {
      (*out.cloud.colors)[k] = {to_channel(vals[static_cast<std::size_t>(ir)]),
                                to_channel(vals[static_cast<std::size_t>(ig)]),
                                to_channel(vals[static_cast<std::size_t>(ib)])};
    }
    if (ii >= 0) (*out.instance)[k] = static_cast<int>(vals[static_cast<std::size_t>(ii)]);
  };

  std::vector<double> vals(v.props.size());
  if (binary) {
    std::vector<char> rec;
    for (std::size_t e = 0; e < vi; ++e) {
      if (elements[e].has_list) ply_fail(offset, "list properties before the vertex element are unsupported");
      rec.resize(elements[e].stride * elements[e].count);
      if (!in.read(rec.data(), static_cast<std::streamsize>(rec.size()))) {
        ply_fail(offset + static_cast<std::size_t>(in.gcount()), "truncated element '" + elements[e].name + "'");
      }
      offset += rec.size();
    }
    rec.resize(v.stride);
    for (std::size_t k = 0; k < v.count; ++k) {
      if (!in.read(rec.data(), static_cast<std::streamsize>(v.stride))) {
        ply_fail(offset + static_cast<std::size_t>(in.gcount()),
                 "truncated vertex data: expected " + std::to_string(v.count) + " vertices, got " +
                     std::to_string(k));
      }
      for (std::size_t p = 0; p < v.props.size(); ++p) {
        vals[p] = decode(v.props[p].type, rec.data() + v.props[p].offset);
      }
      store(k, vals);
      offset += v.stride;
    }
  } else {
    for (std::size_t e = 0; e < vi; ++e) {
      for (std::size_t k = 0; k < elements[e].count; ++k) {
        if (!next_line()) ply_fail(offset, "truncated element '" + elements[e].name + "'");
      }
    }
    for (std::size_t k = 0; k < v.count; ++k) {
      const std::size_t line_start = offset;
      if (!next_line()) {
        ply_fail(offset, "truncated vertex data: expected " + std::to_string(v.count) +
                             " vertices, got " + std::to_string(k));
      }
      std::istringstream ls(line);
      for (std::size_t p = 0; p < v.props.size(); ++p) {
        if (!(ls >> vals[p])) ply_fail(line_start, "malformed vertex line " + std::to_string(k));
      }
      store(k, vals);
    }
  }
  return out;
}

inline PlyData read_ply_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  try {
    return read_ply(in);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

struct PlyWriteOptions {
  bool binary = true;
  /// float64 coordinates instead of float32.
  bool double_precision = false;
};

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

inline void write_ply(std::ostream& out, const PointCloud& cloud, const std::vector<int>* instance = nullptr,
                      const PlyWriteOptions& opts = {}) {
  if (instance && instance->size() != cloud.size()) {
    throw std::invalid_argument("write_ply: instance list length differs from the cloud");
  }
  const bool rgb = cloud.colors.has_value();
  const char* coord = opts.double_precision ? "double" : "float";
  out << "ply\nformat " << (opts.binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << cloud.size() << "\n"
      << "property " << coord << " x\nproperty " << coord << " y\nproperty " << coord << " z\n";
  if (rgb) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (instance) out << "property int instance\n";
  out << "end_header\n";
  if (!opts.binary) out.precision(opts.double_precision ? 17 : 9);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    if (opts.binary) {
      for (int a = 0; a < 3; ++a) {
        if (opts.double_precision) {
          detail::put(out, p[a]);
        } else {
          detail::put(out, static_cast<float>(p[a]));
        }
      }
      if (rgb) out.write(reinterpret_cast<const char*>((*cloud.colors)[i].data()), 3);
      if (instance) detail::put(out, static_cast<std::int32_t>((*instance)[i]));
    } else {
      if (opts.double_precision) {
        out << p.x() << ' ' << p.y() << ' ' << p.z();
      } else {
        out << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' ' << static_cast<float>(p.z());
      }
      if (rgb) {
        const Rgb& c = (*cloud.colors)[i];
        out << ' ' << int{c[0]} << ' ' << int{c[1]} << ' ' << int{c[2]};
      }
      if (instance) out << ' ' << (*instance)[i];
      out << '\n';
    }
  }
}

inline void write_ply_file(const std::string& path, const PointCloud& cloud,
                           const std::vector<int>* instance = nullptr, const PlyWriteOptions& opts = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_ply(out, cloud, instance, opts);
  if (!out) throw InputError("write failed for '" + path + "'");
}

/// Cell centers of every cell with objectness mass above `min_mass`, with a
/// float "vote" property (mass), heading "alpha" and scale sx, sy, sz.
inline void write_grid_ply(std::ostream& out, const VoteGrid& grid, double min_mass = 0.0) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    if (grid.cells[i].obj > min_mass) cells.push_back(i);
  }
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cells.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\nproperty float vote\n"
      << "property float alpha\nproperty float sx\nproperty float sy\nproperty float sz\nend_header\n";
  for (std::size_t i : cells) {
    const Vec3 c = grid.geometry.cell_center(i);
    const CellReading r = read_cell(grid, i);
    for (double v : {c.x(), c.y(), c.z(), r.obj, r.alpha, r.scale.x(), r.scale.y(), r.scale.z()}) {
      detail::put(out, static_cast<float>(v));
    }
  }
}

inline void write_grid_ply_file(const std::string& path, const VoteGrid& grid, double min_mass = 0.0) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  write_grid_ply(out, grid, min_mass);
}

}  // namespace canonvote::io
