#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "canonvote/canonvote.hpp"
#include "canonvote/io/json_io.hpp"
#include "canonvote/io/ply.hpp"

namespace fs = std::filesystem;
using namespace canonvote;
using io::Json;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitConfig = 3;

/// Flags that override the run configuration file.
struct ConfigFlags {
  std::string config_path;
  std::optional<double> tau, delta, beta, gamma, objectness_cut, nms_iou;
  std::optional<int> k;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<double> lcc_sigma, scale_sigma, flip, offset_sigma;
  bool no_backprojection = false;
  bool ignore_objectness = false;
  unsigned jobs = 0;

  void add_to(CLI::App* cmd, bool noise) {
    cmd->add_option("--config", config_path, "Run configuration JSON")->check(CLI::ExistingFile);
    cmd->add_option("--tau", tau, "Grid cell size in meters");
    cmd->add_option("-k,--orientations", k, "Number of candidate headings");
    cmd->add_option("--delta", delta, "Peak threshold on vote mass");
    cmd->add_option("--beta", beta, "Minimum fraction of positive points inside a box");
    cmd->add_option("--gamma", gamma, "Maximum mean canonical discrepancy");
    cmd->add_option("--objectness-cut", objectness_cut, "Objectness above which a point is positive");
    cmd->add_option("--nms-iou", nms_iou, "NMS IoU threshold");
    cmd->add_option("--mode", mode, "Accumulation mode: deterministic or fast");
    cmd->add_flag("--no-backprojection", no_backprojection, "Accept candidates on the positive fraction alone");
    cmd->add_flag("--ignore-objectness", ignore_objectness, "Vote with every objectness set to 1");
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("-j,--jobs", jobs, "Worker threads (0: all cores)")->envname("CANONVOTE_JOBS");
    if (noise) {
      cmd->add_option("--lcc-sigma", lcc_sigma, "Noise on canonical coordinates");
      cmd->add_option("--scale-sigma", scale_sigma, "Noise on scales, meters");
      cmd->add_option("--flip", flip, "Objectness flip probability");
      cmd->add_option("--offset-sigma", offset_sigma, "Noise on direct offsets, meters");
    }
  }

  io::RunConfig resolve(io::RunConfig base = {}) const {
    Json j = Json::object();
    if (tau) j["tau"] = *tau;
    if (k) j["k"] = *k;
    if (delta) j["delta"] = *delta;
    if (beta) j["beta"] = *beta;
    if (gamma) j["gamma"] = *gamma;
    if (objectness_cut) j["objectness_cut"] = *objectness_cut;
    if (nms_iou) j["nms_iou"] = *nms_iou;
    if (mode) j["mode"] = *mode;
    if (seed) j["seed"] = *seed;
    if (no_backprojection) j["check_backprojection"] = false;
    if (ignore_objectness) j["ignore_objectness"] = true;
    Json noise = Json::object();
    if (lcc_sigma) noise["lcc_sigma"] = *lcc_sigma;
    if (scale_sigma) noise["scale_sigma"] = *scale_sigma;
    if (flip) noise["objectness_flip"] = *flip;
    if (offset_sigma) noise["offset_sigma"] = *offset_sigma;
    if (!noise.empty()) j["noise"] = noise;
    io::RunConfig cfg = config_path.empty() ? std::move(base)
                                            : io::run_config_from_json(io::read_json_file(config_path),
                                                                       config_path, std::move(base));
    cfg = io::run_config_from_json(j, "command line", std::move(cfg));
    cfg.detect.jobs = jobs;
    return cfg;
  }
};

void add_symmetry_from_scene(io::RunConfig& cfg, const Scene& scene) {
  for (const auto& c : scene.classes) {
    cfg.detect.boxgen.symmetry_order.try_emplace(c.id, c.symmetry_order);
  }
}

std::string scene_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04zu", i);
  return buf;
}

/// Rounds positions to what a float32 PLY stores, so in-memory results match
/// a re-read of the written file.
void round_to_float(PointCloud& cloud) {
  for (Vec3& p : cloud.positions) p = p.cast<float>().cast<double>();
}

std::pair<Scene, PointCloud> generate_one(const io::BatchRecipe& recipe, std::uint64_t seed) {
  auto [scene, cloud] = make_scene(recipe.scene, seed);
  if (recipe.occlusion.enabled && !scene.boxes.empty()) {
    SplitMix64 rng(stream_seed(seed, 0x0cc1));
    const double log_min = std::log10(recipe.occlusion.min_fraction);
    std::vector<double> targets = partial_indexes(scene, cloud);
    for (double& t : targets) t *= std::pow(10.0, rng.uniform(log_min, 0.0));
    std::tie(scene, cloud) =
        occlude(scene, cloud, targets, stream_seed(seed, 0x0cc2), recipe.scene.occlusion_plane_fraction);
  }
  round_to_float(cloud);
  return {std::move(scene), std::move(cloud)};
}

int cmd_scene_gen(const std::string& recipe_path, const std::string& out_dir, std::uint64_t seed,
                  std::optional<int> count, bool ascii) {
  io::BatchRecipe recipe = io::read_recipe_file(recipe_path);
  if (count) {
    if (*count < 1) throw ConfigError("--count must be >= 1");
    recipe.scenes = *count;
  }
  fs::create_directories(out_dir);
  Json manifest;
  manifest["seed"] = seed;
  manifest["recipe"] = io::recipe_json(recipe);
  Json entries = Json::array();
  for (int i = 0; i < recipe.scenes; ++i) {
    const std::uint64_t scene_seed = stream_seed(seed, static_cast<std::uint64_t>(i));
    auto [scene, cloud] = generate_one(recipe, scene_seed);
    const std::string stem = scene_stem(static_cast<std::size_t>(i));
    const std::vector<double> idx = partial_indexes(scene, cloud);
    Json sj = io::scene_json(scene, &idx);
    sj["seed"] = scene_seed;
    sj["num_points"] = cloud.size();
    io::write_json_file((fs::path(out_dir) / (stem + ".json")).string(), sj);
    io::write_ply_file((fs::path(out_dir) / (stem + ".ply")).string(), cloud, &scene.point_instance,
                       io::PlyWriteOptions{!ascii, false});
    entries.push_back(Json{{"scene", stem + ".json"}, {"ply", stem + ".ply"}, {"seed", scene_seed},
                           {"boxes", scene.boxes.size()}, {"points", cloud.size()}});
  }
  manifest["scenes"] = std::move(entries);
  io::write_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
  std::cout << "wrote " << recipe.scenes << " scene(s) to " << out_dir << "\n";
  return 0;
}

/// Loads a PLY with instance labels and its scene JSON.
std::pair<Scene, PointCloud> load_labeled_scene(const std::string& scene_path, const std::string& ply_path) {
  Scene scene = io::scene_from_json(io::read_json_file(scene_path), scene_path);
  io::PlyData ply = io::read_ply_file(ply_path);
  if (!ply.instance) throw InputError(ply_path + ": the PLY has no 'instance' property");
  scene.point_instance = std::move(*ply.instance);
  scene.validate(ply.cloud);
  return {std::move(scene), std::move(ply.cloud)};
}

int cmd_predict_oracle(const std::string& scene_path, const std::string& ply_path, const std::string& out,
                       const std::string& format, const ConfigFlags& flags) {
  const io::RunConfig cfg = flags.resolve();
  auto [scene, cloud] = load_labeled_scene(scene_path, ply_path);
  NoiseModel noise = cfg.noise;
  noise.seed = cfg.seed;
  const PredictionField field = oracle_field(scene, cloud, noise);
  io::write_field_file(out, field, format == "binary");
  std::cout << "wrote field for " << field.size() << " points to " << out << "\n";
  return 0;
}

PredictionField load_field_for(const std::string& field_path, const PointCloud& cloud) {
  PredictionField field = io::read_field_file(field_path);
  if (field.size() != cloud.size()) {
    throw InputError(field_path + ": field has " + std::to_string(field.size()) + " points but the cloud has " +
                     std::to_string(cloud.size()));
  }
  return field;
}

int cmd_detect(const std::string& ply_path, const std::string& field_path, const std::string& scene_path,
               const std::string& out, const std::string& grid_out, const ConfigFlags& flags) {
  io::RunConfig cfg = flags.resolve();
  if (!scene_path.empty()) add_symmetry_from_scene(cfg, io::scene_from_json(io::read_json_file(scene_path), scene_path));
  const PointCloud cloud = io::read_ply_file(ply_path).cloud;
  const PredictionField field = load_field_for(field_path, cloud);
  const DetectResult res = detect(cloud, field, cfg.detect, !grid_out.empty());

  io::write_text_file(out, io::detections_json(res.boxes).dump(2) + "\n");
  Json echo = io::run_config_json(cfg);
  echo["inputs"] = Json{{"ply", ply_path}, {"field", field_path}};
  io::write_json_file(out + ".config.json", echo);
  if (!grid_out.empty()) {
    if (res.grid) {
      io::write_grid_ply_file(grid_out, *res.grid);
    } else {
      io::write_ply_file(grid_out, PointCloud{});
    }
  }
  double total = 0.0;
  for (const StageTiming& t : res.timings) {
    std::printf("%-8s %9.3f ms\n", t.stage.c_str(), t.seconds * 1e3);
    total += t.seconds;
  }
  std::printf("%-8s %9.3f ms\n", "total", total * 1e3);
  std::printf("%zu detection(s) from %zu candidate(s) -> %s\n", res.boxes.size(), res.candidates, out.c_str());
  return 0;
}

int cmd_export_grid(const std::string& ply_path, const std::string& field_path, const std::string& out,
                    double min_mass, const ConfigFlags& flags) {
  const io::RunConfig cfg = flags.resolve();
  const PointCloud cloud = io::read_ply_file(ply_path).cloud;
  const PredictionField field = load_field_for(field_path, cloud);
  auto grid = make_vote_grid(cloud, field, cfg.detect);
  if (!grid) {
    io::write_ply_file(out, PointCloud{});
    std::cout << "no positive points; wrote an empty vote map\n";
    return 0;
  }
  canonical_vote(cloud, field, *grid, VoteOptions{cfg.detect.k, cfg.detect.mode, cfg.detect.jobs});
  io::write_grid_ply_file(out, *grid, min_mass);
  const auto& d = grid->geometry.dims;
  std::printf("grid %d x %d x %d, total mass %.3f -> %s\n", d[0], d[1], d[2], grid->total_mass(), out.c_str());
  return 0;
}

int cmd_eval(const std::vector<std::string>& scene_paths, const std::vector<std::string>& det_paths,
             const std::vector<double>& edges, const std::string& out) {
  if (scene_paths.size() != det_paths.size()) {
    throw InputError("eval: --scene and --dets must be given the same number of times");
  }
  SceneBoxes dets, gts;
  std::vector<std::vector<double>> idx;
  bool have_idx = true;
  std::map<int, std::string> names;
  for (std::size_t i = 0; i < scene_paths.size(); ++i) {
    const Json sj = io::read_json_file(scene_paths[i]);
    const Scene scene = io::scene_from_json(sj, scene_paths[i]);
    for (const auto& c : scene.classes) names.emplace(c.id, c.name);
    gts.push_back(scene.ground_truth());
    dets.push_back(io::detections_from_json(io::read_json_file(det_paths[i]), det_paths[i]));
    auto stored = io::stored_partial_indexes(sj);
    if (stored) {
      idx.push_back(std::move(*stored));
    } else {
      have_idx = false;
    }
  }
  if (!have_idx) idx.clear();
  EvalReport rep;
  if (have_idx) {
    rep = evaluate(dets, gts, idx, edges);
  } else {
    rep = evaluate(dets, gts, std::vector<std::vector<double>>(gts.size()), {1.0});
    rep.bin_edges.clear();
  }
  std::cout << io::eval_report_table(rep, names);
  if (!out.empty()) {
    Json j = io::eval_report_json(rep, names);
    j["inputs"] = Json{{"scenes", scene_paths}, {"detections", det_paths}};
    io::write_json_file(out, j);
  }
  return 0;
}

io::BatchRecipe default_ablation_recipe() {
  io::BatchRecipe r;
  r.scene.classes = {{"chair", 1, 0, 2, Vec3(0.25, 0.35, 0.25), Vec3(0.4, 0.5, 0.4)},
                     {"table", 2, 0, 2, Vec3(0.4, 0.3, 0.3), Vec3(0.8, 0.45, 0.6)},
                     {"bin", 4, 0, 2, Vec3(0.15, 0.25, 0.15), Vec3(0.25, 0.4, 0.25)}};
  r.scene.total_min = 1;
  r.scene.total_max = 4;
  r.scene.floor_x = r.scene.floor_z = 4.5;
  r.scene.points_min = 100;
  r.scene.points_max = 200;
  r.scene.background_points = 165000;
  r.scenes = 3;
  return r;
}

int cmd_ablate(const std::string& recipe_path, int seeds, std::optional<int> scenes, std::size_t spurious,
               const std::string& out, const ConfigFlags& flags) {
  io::RunConfig base;
  base.noise.lcc_sigma = 0.05;
  base.noise.scale_sigma = 0.02;
  base.noise.objectness_flip = 0.05;
  base.noise.offset_sigma = sigma_for_mae(kDirectOffsetMae);
  const io::RunConfig cfg = flags.resolve(base);
  io::BatchRecipe recipe = recipe_path.empty() ? default_ablation_recipe() : io::read_recipe_file(recipe_path);
  if (scenes) recipe.scenes = *scenes;
  if (seeds < 1 || recipe.scenes < 1) throw ConfigError("ablate: seeds and scenes must be >= 1");

  std::vector<std::vector<AblationRow>> per_seed;
  for (int s = 0; s < seeds; ++s) {
    std::vector<AblationCase> suite;
    for (int i = 0; i < recipe.scenes; ++i) {
      const std::uint64_t scene_seed =
          stream_seed(stream_seed(cfg.seed, static_cast<std::uint64_t>(s)), static_cast<std::uint64_t>(i));
      suite.push_back(make_ablation_case(recipe.scene, cfg.noise, scene_seed, SpuriousClusterOptions{spurious}));
    }
    per_seed.push_back(run_ablations(suite, cfg.detect, cfg.direct));
    std::printf("seed %d:", s);
    for (const auto& row : per_seed.back()) std::printf("  %s %.3f", row.name.c_str(), row.map_50);
    std::printf("\n");
  }
  const std::string csv = io::ablation_csv(per_seed);
  std::cout << csv;
  if (!out.empty()) {
    io::write_text_file(out, csv);
    Json echo = io::run_config_json(cfg);
    echo["recipe"] = io::recipe_json(recipe);
    echo["seeds"] = seeds;
    echo["spurious_points"] = spurious;
    io::write_json_file(out + ".config.json", echo);
  }
  return 0;
}

/// Seconds spent in canonical_vote over a random field of n points.
double time_vote(std::size_t n, int k, unsigned jobs, AccumulationMode mode, std::uint64_t seed) {
  SplitMix64 rng(seed);
  PointCloud cloud;
  PredictionField field;
  field.num_classes = 1;
  cloud.positions.reserve(n);
  field.reserve(n);
  const std::vector<double> scores{1.0};
  for (std::size_t i = 0; i < n; ++i) {
    cloud.positions.emplace_back(rng.uniform(0.0, 4.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 4.0));
    field.push_back(Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)),
                    Vec3(rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5)), 1.0, scores);
  }
  // Fixed extent so that every size votes into the same grid.
  VoteGrid grid = grid_from_extent(cloud, Vec3::Constant(0.5), GridOptions{});
  const auto t0 = std::chrono::steady_clock::now();
  canonical_vote(cloud, field, grid, VoteOptions{k, mode, jobs});
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_bench(const std::vector<std::size_t>& sizes, const std::string& out, const ConfigFlags& flags) {
  const io::RunConfig cfg = flags.resolve();
  Json rows = Json::array();
  std::printf("%10s %5s %10s %10s %14s %8s\n", "N", "k", "t(N) s", "t(2N) s", "points/s", "ratio");
  for (std::size_t n : sizes) {
    if (n == 0) throw ConfigError("bench: sizes must be >= 1");
    const double t1 = time_vote(n, cfg.detect.k, cfg.detect.jobs, cfg.detect.mode, cfg.seed);
    const double t2 = time_vote(2 * n, cfg.detect.k, cfg.detect.jobs, cfg.detect.mode, cfg.seed + 1);
    const double ratio = t2 / t1;
    const double rate = static_cast<double>(n) / t1;
    std::printf("%10zu %5d %10.4f %10.4f %14.0f %8.3f\n", n, cfg.detect.k, t1, t2, rate, ratio);
    rows.push_back(Json{{"n", n}, {"k", cfg.detect.k}, {"seconds", t1}, {"seconds_2n", t2},
                        {"points_per_second", rate}, {"linearity_ratio", ratio}});
  }
  if (!out.empty()) {
    Json j;
    j["config"] = io::run_config_json(cfg);
    j["jobs"] = resolve_jobs(cfg.detect.jobs);
    j["results"] = std::move(rows);
    io::write_json_file(out, j);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Canonical-voting 3D box detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "canonvote 0.1.0");

  // scene-gen
  auto* sg = app.add_subcommand("scene-gen", "Generate synthetic scenes from a recipe");
  std::string sg_recipe, sg_out;
  std::uint64_t sg_seed = 0;
  std::optional<int> sg_count;
  bool sg_ascii = false;
  sg->add_option("--recipe", sg_recipe, "Scene recipe JSON")->required()->check(CLI::ExistingFile);
  sg->add_option("--out", sg_out, "Output directory")->required();
  sg->add_option("--seed", sg_seed, "Base seed");
  sg->add_option("--count", sg_count, "Number of scenes (overrides the recipe)");
  sg->add_flag("--ascii", sg_ascii, "Write ascii PLY instead of binary");

  // predict-oracle
  auto* po = app.add_subcommand("predict-oracle", "Ground-truth prediction field, optionally noisy");
  std::string po_scene, po_ply, po_out, po_format = "binary";
  ConfigFlags po_flags;
  po->add_option("--scene", po_scene, "Scene JSON")->required()->check(CLI::ExistingFile);
  po->add_option("--ply", po_ply, "Scene PLY with instance ids")->required()->check(CLI::ExistingFile);
  po->add_option("--out", po_out, "Output field file")->required();
  po->add_option("--format", po_format, "binary or jsonl")->check(CLI::IsMember({"binary", "jsonl"}));
  po_flags.add_to(po, true);

  // detect
  auto* de = app.add_subcommand("detect", "Detect boxes from a point cloud and a prediction field");
  std::string de_ply, de_field, de_scene, de_out, de_grid;
  ConfigFlags de_flags;
  de->add_option("--ply", de_ply, "Point cloud PLY")->required()->check(CLI::ExistingFile);
  de->add_option("--field", de_field, "Prediction field (binary or JSON lines)")->required()->check(CLI::ExistingFile);
  de->add_option("--scene", de_scene, "Scene JSON supplying per-class symmetry orders")->check(CLI::ExistingFile);
  de->add_option("--out", de_out, "Detections JSON")->required();
  de->add_option("--export-grid", de_grid, "Also write the vote map as PLY");
  de_flags.add_to(de, false);

  // export-grid
  auto* eg = app.add_subcommand("export-grid", "Vote and write the vote map as PLY");
  std::string eg_ply, eg_field, eg_out;
  double eg_min = 0.0;
  ConfigFlags eg_flags;
  eg->add_option("--ply", eg_ply, "Point cloud PLY")->required()->check(CLI::ExistingFile);
  eg->add_option("--field", eg_field, "Prediction field")->required()->check(CLI::ExistingFile);
  eg->add_option("--out", eg_out, "Vote map PLY")->required();
  eg->add_option("--min-mass", eg_min, "Skip cells with mass at or below this");
  eg_flags.add_to(eg, false);

  // eval
  auto* ev = app.add_subcommand("eval", "Average precision and recall by partial index");
  std::vector<std::string> ev_scenes, ev_dets;
  std::vector<double> ev_edges;
  std::string ev_out;
  ev->add_option("--scene", ev_scenes, "Scene JSON (repeatable)")->required()->check(CLI::ExistingFile);
  ev->add_option("--dets", ev_dets, "Detections JSON, one per --scene")->required()->check(CLI::ExistingFile);
  ev->add_option("--bin-edges", ev_edges, "Partial-index bin edges (default: deciles)")->delimiter(',');
  ev->add_option("--out", ev_out, "Report JSON");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Full pipeline against its ablated variants");
  std::string ab_recipe, ab_out;
  int ab_seeds = 5;
  std::optional<int> ab_scenes;
  std::size_t ab_spurious = 600;
  ConfigFlags ab_flags;
  ab->add_option("--recipe", ab_recipe, "Scene recipe JSON (default: built-in cluttered suite)")
      ->check(CLI::ExistingFile);
  ab->add_option("--seeds", ab_seeds, "Number of seeds");
  ab->add_option("--scenes", ab_scenes, "Scenes per seed (overrides the recipe)");
  ab->add_option("--spurious", ab_spurious, "Points in the adversarial cluster per scene (0: none)");
  ab->add_option("--out", ab_out, "CSV output");
  ab_flags.add_to(ab, true);

  // bench
  auto* be = app.add_subcommand("bench", "Time canonical voting and report linearity");
  std::vector<std::size_t> be_sizes{10000, 100000, 1000000};
  std::string be_out;
  ConfigFlags be_flags;
  be->add_option("--sizes", be_sizes, "Point counts N; each is also timed at 2N")->delimiter(',');
  be->add_option("--out", be_out, "Results JSON");
  be_flags.add_to(be, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*sg) return cmd_scene_gen(sg_recipe, sg_out, sg_seed, sg_count, sg_ascii);
    if (*po) return cmd_predict_oracle(po_scene, po_ply, po_out, po_format, po_flags);
    if (*de) return cmd_detect(de_ply, de_field, de_scene, de_out, de_grid, de_flags);
    if (*eg) return cmd_export_grid(eg_ply, eg_field, eg_out, eg_min, eg_flags);
    if (*ev) return cmd_eval(ev_scenes, ev_dets, ev_edges, ev_out);
    if (*ab) return cmd_ablate(ab_recipe, ab_seeds, ab_scenes, ab_spurious, ab_out, ab_flags);
    if (*be) return cmd_bench(be_sizes, be_out, be_flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
