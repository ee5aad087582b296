#pragma once

// JSON formats: scene ground truth, detections, prediction fields (JSON lines
// or a binary blob with a JSON header), scene recipes, run configuration,
// evaluation reports and ablation tables.

#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "canonvote/eval.hpp"
#include "canonvote/oracle.hpp"
#include "canonvote/pipeline.hpp"
#include "canonvote/prediction.hpp"
#include "canonvote/scenegen.hpp"

namespace canonvote::io {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Field-checked access with a path for diagnostics.

class JsonReader {
 public:
  JsonReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

  const Json& json() const { return j_; }
  const std::string& path() const { return path_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw InputError((path_.empty() ? std::string("<root>") : path_) + ": " + what);
  }

  void require_object() const {
    if (!j_.is_object()) fail("expected an object");
  }

  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  JsonReader at(const std::string& key) const {
    require_object();
    if (!j_.contains(key)) fail("missing field '" + key + "'");
    return JsonReader(j_.at(key), join(key));
  }

  JsonReader at(std::size_t i) const {
    return JsonReader(j_.at(i), path_ + "[" + std::to_string(i) + "]");
  }

  std::size_t size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }

  double number() const {
    if (!j_.is_number()) fail("expected a number");
    return j_.get<double>();
  }

  long long integer() const {
    if (j_.is_number_integer() || j_.is_number_unsigned()) return j_.get<long long>();
    if (j_.is_number_float()) {
      const double d = j_.get<double>();
      if (d == std::floor(d)) return static_cast<long long>(d);
    }
    fail("expected an integer");
  }

  bool boolean() const {
    if (!j_.is_boolean()) fail("expected true or false");
    return j_.get<bool>();
  }

  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }

  Vec3 vec3() const {
    if (!j_.is_array() || j_.size() != 3) fail("expected an array of 3 numbers");
    Vec3 v;
    for (std::size_t a = 0; a < 3; ++a) v[static_cast<int>(a)] = at(a).number();
    return v;
  }

  std::pair<long long, long long> int_range() const {
    if (j_.is_number()) {
      const long long v = integer();
      return {v, v};
    }
    if (!j_.is_array() || j_.size() != 2) fail("expected an integer or a [min, max] pair");
    return {at(0).integer(), at(1).integer()};
  }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? at(key).number() : fallback;
  }

  /// Rejects keys outside `allowed`, so misspelled options do not pass silently.
  void only_keys(std::initializer_list<const char*> allowed) const {
    require_object();
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) fail("unknown field '" + it.key() + "'");
    }
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& j_;
  std::string path_;
};

/// Parses text, reporting syntax errors with line and column.
inline Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw InputError(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                     ": JSON syntax error: " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json read_json_file(const std::string& path) { return parse_json_text(read_text_file(path), path); }

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + path + "'");
}

inline void write_json_file(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

// ---------------------------------------------------------------------------
// Boxes and scenes.

inline Json box_json(const OrientedBox& b, bool with_score = true) {
  Json j;
  j["center"] = vec3_json(b.pose.center);
  j["scale"] = vec3_json(b.pose.scale);
  j["alpha"] = b.pose.alpha;
  j["class_id"] = b.class_id;
  if (with_score) j["score"] = b.score;
  return j;
}

inline OrientedBox box_from_json(const JsonReader& r) {
  r.require_object();
  OrientedBox b;
  try {
    b.pose = BoxPose::make(r.at("scale").vec3(), r.at("alpha").number(), r.at("center").vec3());
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  b.class_id = static_cast<int>(r.at("class_id").integer());
  b.score = r.number_or("score", 1.0);
  return b;
}

/// Detection output: a JSON array of boxes.
inline Json detections_json(const std::vector<OrientedBox>& boxes) {
  Json arr = Json::array();
  for (const auto& b : boxes) arr.push_back(box_json(b));
  return arr;
}

inline std::vector<OrientedBox> detections_from_json(const Json& j, const std::string& source) {
  JsonReader r(j, source);
  std::vector<OrientedBox> out;
  for (std::size_t i = 0; i < r.size(); ++i) out.push_back(box_from_json(r.at(i)));
  return out;
}

inline Json classes_json(const std::vector<ClassInfo>& classes) {
  Json arr = Json::array();
  for (const auto& c : classes) {
    arr.push_back(Json{{"id", c.id}, {"name", c.name}, {"symmetry_order", c.symmetry_order}});
  }
  return arr;
}

/// Scene ground truth. Instance ids travel in the PLY "instance" property.
inline Json scene_json(const Scene& scene, const std::vector<double>* partial_idx = nullptr) {
  Json j;
  j["classes"] = classes_json(scene.classes);
  Json boxes = Json::array();
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    Json b = box_json(scene.boxes[i].box, false);
    b["symmetry_order"] = scene.boxes[i].symmetry_order;
    if (partial_idx) b["partial_index"] = (*partial_idx)[i];
    boxes.push_back(std::move(b));
  }
  j["boxes"] = std::move(boxes);
  return j;
}

inline Scene scene_from_json(const Json& j, const std::string& source) {
  JsonReader r(j, source);
  r.require_object();
  Scene s;
  const JsonReader classes = r.at("classes");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const JsonReader c = classes.at(i);
    s.classes.push_back({static_cast<int>(c.at("id").integer()), c.at("name").string(),
                         static_cast<int>(c.at("symmetry_order").integer())});
  }
  const JsonReader boxes = r.at("boxes");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const JsonReader b = boxes.at(i);
    GroundTruthBox gt;
    gt.box = box_from_json(b);
    gt.symmetry_order = b.has("symmetry_order") ? static_cast<int>(b.at("symmetry_order").integer())
                                                : s.symmetry_of_class(gt.box.class_id);
    s.boxes.push_back(gt);
  }
  return s;
}

/// Stored partial indexes of a scene file, when present for every box.
inline std::optional<std::vector<double>> stored_partial_indexes(const Json& j) {
  std::vector<double> out;
  if (!j.contains("boxes")) return std::nullopt;
  for (const auto& b : j.at("boxes")) {
    if (!b.contains("partial_index")) return std::nullopt;
    out.push_back(b.at("partial_index").get<double>());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction fields.

inline constexpr char kFieldMagic[8] = {'C', 'V', 'F', 'I', 'E', 'L', 'D', '1'};

inline void write_field_jsonl(std::ostream& out, const PredictionField& f) {
  for (std::size_t i = 0; i < f.size(); ++i) {
    Json rec;
    rec["lcc"] = vec3_json(f.lcc[i]);
    rec["scale"] = vec3_json(f.scale[i]);
    rec["objectness"] = f.objectness[i];
    rec["class_scores"] = std::vector<double>(f.class_row(i), f.class_row(i) + f.num_classes);
    out << rec.dump() << '\n';
  }
}

/// Binary layout: 8-byte magic, little-endian uint32 header length, JSON
/// header, then one float64 record per point.
inline void write_field_binary(std::ostream& out, const PredictionField& f) {
  Json header;
  header["num_points"] = f.size();
  header["num_classes"] = f.num_classes;
  header["dtype"] = "float64";
  header["endianness"] = "little";
  header["record"] = Json::array({"lcc_x", "lcc_y", "lcc_z", "scale_x", "scale_y", "scale_z", "objectness",
                                  "class_scores[num_classes]"});
  const std::string h = header.dump();
  out.write(kFieldMagic, sizeof(kFieldMagic));
  const auto len = static_cast<std::uint32_t>(h.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  std::vector<double> rec(7 + static_cast<std::size_t>(f.num_classes));
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      rec[static_cast<std::size_t>(a)] = f.lcc[i][a];
      rec[static_cast<std::size_t>(3 + a)] = f.scale[i][a];
    }
    rec[6] = f.objectness[i];
    std::copy(f.class_row(i), f.class_row(i) + f.num_classes, rec.begin() + 7);
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size() * sizeof(double)));
  }
}

inline PredictionField read_field_binary(std::istream& in, const std::string& source) {
  char magic[sizeof(kFieldMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kFieldMagic, sizeof(magic)) != 0) {
    throw InputError(source + ": not a binary field file (bad magic)");
  }
  std::uint32_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len))) throw InputError(source + ": truncated header");
  std::string h(len, '\0');
  if (!in.read(h.data(), len)) throw InputError(source + ": truncated header");
  const Json header = parse_json_text(h, source + " (header)");
  JsonReader hr(header, "header");
  if (hr.at("dtype").string() != "float64" || hr.at("endianness").string() != "little") {
    hr.fail("only little-endian float64 fields are supported");
  }
  const long long n = hr.at("num_points").integer();
  const long long nc = hr.at("num_classes").integer();
  if (n < 0 || nc < 1) hr.fail("invalid num_points or num_classes");
  PredictionField f;
  f.num_classes = static_cast<int>(nc);
  f.reserve(static_cast<std::size_t>(n));
  std::vector<double> rec(7 + static_cast<std::size_t>(nc));
  std::vector<double> scores(static_cast<std::size_t>(nc));
  const std::size_t data_start = sizeof(kFieldMagic) + sizeof(len) + len;
  for (long long i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size() * sizeof(double)))) {
      throw InputError(source + ": truncated data at record " + std::to_string(i) + " (byte " +
                       std::to_string(data_start + static_cast<std::size_t>(i) * rec.size() * sizeof(double)) +
                       ")");
    }
    std::copy(rec.begin() + 7, rec.end(), scores.begin());
    f.push_back(Vec3(rec[0], rec[1], rec[2]), Vec3(rec[3], rec[4], rec[5]), rec[6], scores);
  }
  f.validate();
  return f;
}

inline PredictionField read_field_jsonl(std::istream& in, const std::string& source) {
  PredictionField f;
  f.num_classes = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const Json rec = parse_json_text(line, where);
    JsonReader r(rec, where);
    r.only_keys({"lcc", "scale", "objectness", "class_scores"});
    const JsonReader cs = r.at("class_scores");
    std::vector<double> scores(cs.size());
    for (std::size_t c = 0; c < scores.size(); ++c) scores[c] = cs.at(c).number();
    if (f.num_classes == 0) {
      if (scores.empty()) cs.fail("needs at least one class");
      f.num_classes = static_cast<int>(scores.size());
    } else if (static_cast<int>(scores.size()) != f.num_classes) {
      cs.fail("expected " + std::to_string(f.num_classes) + " scores");
    }
    f.push_back(r.at("lcc").vec3(), r.at("scale").vec3(), r.at("objectness").number(), scores);
  }
  if (f.num_classes == 0) f.num_classes = 1;
  f.validate();
  return f;
}

/// Reads either format, chosen by the magic bytes.
inline PredictionField read_field_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  char magic[sizeof(kFieldMagic)] = {};
  in.read(magic, sizeof(magic));
  const bool binary = in.gcount() == sizeof(magic) && std::memcmp(magic, kFieldMagic, sizeof(magic)) == 0;
  in.clear();
  in.seekg(0);
  try {
    return binary ? read_field_binary(in, path) : read_field_jsonl(in, path);
  } catch (const InputError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path, 0) == 0) throw;
    throw InputError(path + ": " + msg);
  }
}

inline void write_field_file(const std::string& path, const PredictionField& f, bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  if (binary) {
    write_field_binary(out, f);
  } else {
    write_field_jsonl(out, f);
  }
  if (!out) throw InputError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Scene recipes.

struct OcclusionRecipe {
  bool enabled = false;
  /// Each box keeps a fraction of its partial index drawn log-uniformly from
  /// [min_fraction, 1].
  double min_fraction = 0.1;
};

struct BatchRecipe {
  SceneRecipe scene;
  OcclusionRecipe occlusion;
  int scenes = 1;
};

inline BatchRecipe recipe_from_json(const Json& j, const std::string& source) {
  JsonReader r(j, source);
  r.only_keys({"classes", "floor", "clearance", "points_per_object", "background_points", "wall_fraction",
               "wall_height", "floor_margin", "surface_inset", "max_attempts", "occlusion_plane_fraction",
               "total_boxes", "occlusion", "scenes"});
  BatchRecipe out;
  SceneRecipe& s = out.scene;
  const JsonReader classes = r.at("classes");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const JsonReader c = classes.at(i);
    c.only_keys({"name", "symmetry_order", "count", "scale_min", "scale_max"});
    ClassRecipe cr;
    cr.name = c.at("name").string();
    if (c.has("symmetry_order")) cr.symmetry_order = static_cast<int>(c.at("symmetry_order").integer());
    const auto [lo, hi] = c.at("count").int_range();
    cr.count_min = static_cast<int>(lo);
    cr.count_max = static_cast<int>(hi);
    cr.scale_min = c.at("scale_min").vec3();
    cr.scale_max = c.at("scale_max").vec3();
    s.classes.push_back(cr);
  }
  if (r.has("floor")) {
    const JsonReader f = r.at("floor");
    if (f.size() != 2) f.fail("expected [x_extent, z_extent]");
    s.floor_x = f.at(0).number();
    s.floor_z = f.at(1).number();
  }
  s.clearance = r.number_or("clearance", s.clearance);
  if (r.has("points_per_object")) {
    const auto [lo, hi] = r.at("points_per_object").int_range();
    s.points_min = static_cast<int>(lo);
    s.points_max = static_cast<int>(hi);
  }
  if (r.has("background_points")) s.background_points = static_cast<int>(r.at("background_points").integer());
  s.wall_fraction = r.number_or("wall_fraction", s.wall_fraction);
  s.wall_height = r.number_or("wall_height", s.wall_height);
  s.floor_margin = r.number_or("floor_margin", s.floor_margin);
  s.surface_inset = r.number_or("surface_inset", s.surface_inset);
  if (r.has("max_attempts")) s.max_attempts = static_cast<int>(r.at("max_attempts").integer());
  s.occlusion_plane_fraction = r.number_or("occlusion_plane_fraction", s.occlusion_plane_fraction);
  if (r.has("total_boxes")) {
    const auto [lo, hi] = r.at("total_boxes").int_range();
    s.total_min = static_cast<int>(lo);
    s.total_max = static_cast<int>(hi);
  }
  if (r.has("occlusion")) {
    const JsonReader o = r.at("occlusion");
    o.only_keys({"min_fraction"});
    out.occlusion.enabled = true;
    out.occlusion.min_fraction = o.number_or("min_fraction", out.occlusion.min_fraction);
    if (!(out.occlusion.min_fraction > 0.0 && out.occlusion.min_fraction <= 1.0)) {
      throw ConfigError(source + ": occlusion.min_fraction must be in (0,1]");
    }
  }
  if (r.has("scenes")) out.scenes = static_cast<int>(r.at("scenes").integer());
  if (out.scenes < 1) throw ConfigError(source + ": scenes must be >= 1");
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return out;
}

inline Json recipe_json(const BatchRecipe& b) {
  const SceneRecipe& s = b.scene;
  Json j;
  Json classes = Json::array();
  for (const auto& c : s.classes) {
    classes.push_back(Json{{"name", c.name},
                           {"symmetry_order", c.symmetry_order},
                           {"count", Json::array({c.count_min, c.count_max})},
                           {"scale_min", vec3_json(c.scale_min)},
                           {"scale_max", vec3_json(c.scale_max)}});
  }
  j["classes"] = std::move(classes);
  j["floor"] = Json::array({s.floor_x, s.floor_z});
  j["clearance"] = s.clearance;
  j["points_per_object"] = Json::array({s.points_min, s.points_max});
  j["background_points"] = s.background_points;
  j["wall_fraction"] = s.wall_fraction;
  j["wall_height"] = s.wall_height;
  j["floor_margin"] = s.floor_margin;
  j["surface_inset"] = s.surface_inset;
  j["max_attempts"] = s.max_attempts;
  j["occlusion_plane_fraction"] = s.occlusion_plane_fraction;
  j["total_boxes"] = Json::array({s.total_min, s.total_max});
  if (b.occlusion.enabled) j["occlusion"] = Json{{"min_fraction", b.occlusion.min_fraction}};
  j["scenes"] = b.scenes;
  return j;
}

inline BatchRecipe read_recipe_file(const std::string& path) { return recipe_from_json(read_json_file(path), path); }

// ---------------------------------------------------------------------------
// Run configuration.

struct RunConfig {
  DetectConfig detect;
  NoiseModel noise;
  DirectVoteConfig direct;
  std::uint64_t seed = 0;

  void validate() const {
    detect.validate();
    noise.validate();
  }
};

inline Json run_config_json(const RunConfig& c) {
  Json j;
  j["tau"] = c.detect.tau;
  j["k"] = c.detect.k;
  j["delta"] = c.detect.boxgen.delta;
  j["beta"] = c.detect.boxgen.beta;
  j["gamma"] = c.detect.boxgen.gamma;
  j["objectness_cut"] = c.detect.boxgen.objectness_cut;
  j["nms_iou"] = c.detect.nms_iou;
  j["max_boxes"] = c.detect.boxgen.max_boxes;
  j["check_backprojection"] = c.detect.boxgen.check_backprojection;
  j["ignore_objectness"] = c.detect.ignore_objectness;
  j["mode"] = c.detect.mode == AccumulationMode::kDeterministic ? "deterministic" : "fast";
  j["memory_budget_mb"] = static_cast<double>(c.detect.memory_budget_bytes) / (1024.0 * 1024.0);
  Json sym = Json::object();
  for (const auto& [cls, order] : c.detect.boxgen.symmetry_order) sym[std::to_string(cls)] = order;
  j["symmetry_order"] = std::move(sym);
  j["noise"] = Json{{"lcc_sigma", c.noise.lcc_sigma},
                    {"scale_sigma", c.noise.scale_sigma},
                    {"objectness_flip", c.noise.objectness_flip},
                    {"offset_sigma", c.noise.offset_sigma}};
  j["direct_delta"] = c.direct.delta;
  j["seed"] = c.seed;
  return j;
}

/// Applies the fields present in `j` on top of `base`.
inline RunConfig run_config_from_json(const Json& j, const std::string& source, RunConfig base = {}) {
  JsonReader r(j, source);
  r.only_keys({"tau", "k", "delta", "beta", "gamma", "objectness_cut", "nms_iou", "max_boxes",
               "check_backprojection", "ignore_objectness", "mode", "memory_budget_mb", "symmetry_order", "noise",
               "direct_delta", "seed"});
  RunConfig c = std::move(base);
  c.detect.tau = r.number_or("tau", c.detect.tau);
  if (r.has("k")) c.detect.k = static_cast<int>(r.at("k").integer());
  c.detect.boxgen.delta = r.number_or("delta", c.detect.boxgen.delta);
  c.detect.boxgen.beta = r.number_or("beta", c.detect.boxgen.beta);
  c.detect.boxgen.gamma = r.number_or("gamma", c.detect.boxgen.gamma);
  c.detect.boxgen.objectness_cut = r.number_or("objectness_cut", c.detect.boxgen.objectness_cut);
  c.detect.nms_iou = r.number_or("nms_iou", c.detect.nms_iou);
  if (r.has("max_boxes")) {
    const long long m = r.at("max_boxes").integer();
    if (m < 1) throw ConfigError(source + ": max_boxes must be >= 1");
    c.detect.boxgen.max_boxes = static_cast<std::size_t>(m);
  }
  if (r.has("check_backprojection")) c.detect.boxgen.check_backprojection = r.at("check_backprojection").boolean();
  if (r.has("ignore_objectness")) c.detect.ignore_objectness = r.at("ignore_objectness").boolean();
  if (r.has("mode")) {
    const std::string m = r.at("mode").string();
    if (m == "deterministic") {
      c.detect.mode = AccumulationMode::kDeterministic;
    } else if (m == "fast") {
      c.detect.mode = AccumulationMode::kFast;
    } else {
      throw ConfigError(source + ": mode must be 'deterministic' or 'fast'");
    }
  }
  if (r.has("memory_budget_mb")) {
    const double mb = r.at("memory_budget_mb").number();
    if (!(mb > 0.0)) throw ConfigError(source + ": memory_budget_mb must be > 0");
    c.detect.memory_budget_bytes = static_cast<std::size_t>(mb * 1024.0 * 1024.0);
  }
  if (r.has("symmetry_order")) {
    const JsonReader sym = r.at("symmetry_order");
    sym.require_object();
    for (auto it = sym.json().begin(); it != sym.json().end(); ++it) {
      const JsonReader v = sym.at(it.key());
      int cls = 0;
      try {
        std::size_t used = 0;
        cls = std::stoi(it.key(), &used);
        if (used != it.key().size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        v.fail("class ids must be integers");
      }
      const long long order = v.integer();
      if (order < 1) throw ConfigError(v.path() + ": symmetry order must be >= 1");
      c.detect.boxgen.symmetry_order[cls] = static_cast<int>(order);
    }
  }
  if (r.has("noise")) {
    const JsonReader n = r.at("noise");
    n.only_keys({"lcc_sigma", "scale_sigma", "objectness_flip", "offset_sigma"});
    c.noise.lcc_sigma = n.number_or("lcc_sigma", c.noise.lcc_sigma);
    c.noise.scale_sigma = n.number_or("scale_sigma", c.noise.scale_sigma);
    c.noise.objectness_flip = n.number_or("objectness_flip", c.noise.objectness_flip);
    c.noise.offset_sigma = n.number_or("offset_sigma", c.noise.offset_sigma);
  }
  c.direct.delta = r.number_or("direct_delta", c.direct.delta);
  if (r.has("seed")) {
    const long long s = r.at("seed").integer();
    if (s < 0) throw ConfigError(source + ": seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(s);
  }
  c.direct.tau = c.detect.tau;
  c.direct.objectness_cut = c.detect.boxgen.objectness_cut;
  c.direct.max_boxes = c.detect.boxgen.max_boxes;
  c.direct.memory_budget_bytes = c.detect.memory_budget_bytes;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

inline RunConfig read_run_config_file(const std::string& path) {
  return run_config_from_json(read_json_file(path), path);
}

// ---------------------------------------------------------------------------
// Reports.

inline Json eval_report_json(const EvalReport& rep, const std::map<int, std::string>& class_names = {}) {
  Json j;
  j["iou_thresholds"] = rep.iou_thresholds;
  j["map_25"] = rep.map_25;
  j["map_50"] = rep.map_50;
  Json per = Json::array();
  for (const ApResult& ap : rep.ap) {
    for (const auto& [cls, c] : ap.per_class) {
      Json e;
      e["iou_threshold"] = ap.iou_threshold;
      e["class_id"] = cls;
      const auto it = class_names.find(cls);
      if (it != class_names.end()) e["name"] = it->second;
      e["ap"] = c.ap;
      e["tp"] = c.tp;
      e["fp"] = c.fp;
      e["fn"] = c.fn;
      per.push_back(std::move(e));
    }
  }
  j["per_class"] = std::move(per);
  j["bin_edges"] = rep.bin_edges;
  Json bins = Json::array();
  for (const RecallBin& b : rep.recall_50) {
    Json e{{"lo", b.lo}, {"hi", b.hi}, {"total", b.total}, {"matched", b.matched}};
    e["recall"] = b.recall ? Json(*b.recall) : Json(nullptr);
    bins.push_back(std::move(e));
  }
  j["recall_50_by_partial_index"] = std::move(bins);
  return j;
}

inline std::string eval_report_table(const EvalReport& rep, const std::map<int, std::string>& class_names = {}) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "mAP@0.25 " << rep.map_25 << "\nmAP@0.50 " << rep.map_50 << "\n\n";
  os << std::left << std::setw(8) << "iou" << std::setw(16) << "class" << std::right << std::setw(8) << "AP"
     << std::setw(6) << "TP" << std::setw(6) << "FP" << std::setw(6) << "FN" << "\n";
  for (const ApResult& ap : rep.ap) {
    for (const auto& [cls, c] : ap.per_class) {
      const auto it = class_names.find(cls);
      const std::string name = it != class_names.end() ? it->second : std::to_string(cls);
      os << std::left << std::setw(8) << std::setprecision(2) << ap.iou_threshold << std::setw(16) << name
         << std::right << std::setw(8) << std::setprecision(4) << c.ap << std::setw(6) << c.tp << std::setw(6)
         << c.fp << std::setw(6) << c.fn << "\n";
    }
  }
  if (!rep.recall_50.empty()) {
    os << "\nrecall@0.50 by partial index\n";
    for (const RecallBin& b : rep.recall_50) {
      os << "  [" << std::setprecision(1) << b.lo << ", " << b.hi << ")  n=" << b.total << "  recall=";
      if (b.recall) {
        os << std::setprecision(4) << *b.recall;
      } else {
        os << "-";
      }
      os << "\n";
    }
  }
  return os.str();
}

/// One row per variant; with several seeds the mean and sample deviation.
inline std::string ablation_csv(const std::vector<std::vector<AblationRow>>& per_seed) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "variant,map_50,map_50_std,seeds\n";
  if (per_seed.empty()) return os.str();
  for (std::size_t v = 0; v < per_seed.front().size(); ++v) {
    double sum = 0.0, sq = 0.0;
    for (const auto& rows : per_seed) sum += rows[v].map_50;
    const double n = static_cast<double>(per_seed.size());
    const double mean = sum / n;
    for (const auto& rows : per_seed) sq += (rows[v].map_50 - mean) * (rows[v].map_50 - mean);
    const double sd = per_seed.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
    os << '"' << per_seed.front()[v].name << "\"," << mean << ',' << sd << ',' << per_seed.size() << "\n";
  }
  return os.str();
}

}  // namespace canonvote::io
