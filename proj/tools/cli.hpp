#pragma once

// The `sptd` command line: config-driven runs of the full pipeline. Every
// output directory receives run_config.json, the effective configuration
// after flag overrides.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sptd/sptd.hpp"

namespace sptd::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nlohmann::literals;

constexpr int kExitUsage = 64;

inline json default_config() {
  return {
      {"model", {{"type", "planted"}, {"planted", PlantedModelSpec{}.to_json()}, {"g", ""}, {"h", ""}, {"meta", ""}}},
      {"paths", {{"manifest", ""}, {"bank", ""}, {"report", ""}, {"explanations", ""}, {"frames", ""}, {"out", ""}}},
      {"subset", {{"r", 4}, {"attack_only", true}, {"spoof_types", json::array()}}},
      {"k", 15},
      {"patch_spec", {{"grid_rows", 4}, {"grid_cols", 4}, {"patch_h", 0}, {"patch_w", 0}}},
      {"exemplars", 5},
      {"solver", {{"max_iters", 500}, {"rel_tol", 1e-6}, {"epsilon", 1e-9}, {"u_steps", 10}, {"init", "uniform"}}},
      {"sobol", {{"n", 32}, {"mode", "per_image"}}},
      {"rise", {{"num_masks", 2000}, {"cells", 7}, {"keep_prob", 0.5}, {"coverage_normalization", true}, {"batch", 50}}},
      {"explain", {{"mode", "crise"}, {"alpha", 0.3}, {"score", "max"}}},
      {"eval", {{"x", 0.3}, {"selector", "best"}}},
      {"fidelity", {{"steps", 100}}},
      {"frames", {{"l", 5}, {"iter_count", 1000}, {"bins", 8}, {"detector", {{"type", "all"}, {"lo", 0.05}, {"hi", 0.95}}}}},
      {"synth", {{"videos", 10}, {"frames_per_video", 4}, {"live", 4}}},
      {"seeds", {{"subset", 0}, {"solver", 0}, {"sobol", 0}, {"rise", 0}, {"frames", 0}, {"synth", 0}}},
  };
}

namespace detail {

inline void absolutize(json& v, const fs::path& base) {
  if (!v.is_string()) return;
  const auto s = v.get<std::string>();
  if (s.empty()) return;
  const fs::path p(s);
  v = (p.is_absolute() ? p : base / p).lexically_normal().generic_string();
}

// Relative paths inside a config file are relative to that file.
inline void resolve_paths(json& cfg, const fs::path& base) {
  if (auto it = cfg.find("paths"); it != cfg.end() && it->is_object())
    for (auto& [key, v] : it->items()) absolutize(v, base);
  if (auto it = cfg.find("model"); it != cfg.end() && it->is_object())
    for (const char* key : {"g", "h", "meta"})
      if (it->contains(key)) absolutize((*it)[key], base);
}

template <class T>
T get(const json& cfg, const json::json_pointer& ptr) {
  try {
    return cfg.at(ptr).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, "config entry " + ptr.to_string() + ": " + e.what());
  }
}

inline fs::path path_of(const json& cfg, const std::string& key, bool required = true) {
  const auto s = get<std::string>(cfg, json::json_pointer("/paths/" + key));
  if (s.empty() && required) fail(ErrorCode::InvalidArgument, "no " + key + " path given (config paths." + key + " or --" + key + ")");
  return s;
}

inline void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

}  // namespace detail

// Config file, then flags; one per subcommand invocation.
struct Context {
  std::optional<std::string> config_path;
  std::optional<std::size_t> workers_flag;
  std::vector<std::pair<std::string, std::string>> path_flags;  // key, value
  std::vector<std::function<void(json&)>> overrides;
  json cfg;
  std::size_t workers = 1;

  void build(const std::string& command) {
    cfg = default_config();
    if (config_path) {
      const fs::path p = fs::absolute(*config_path);
      if (!fs::exists(p)) fail(ErrorCode::IoError, "config file " + p.string() + " not found");
      json file;
      try {
        file = json::parse(read_file(p));
      } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, "cannot parse config " + p.string() + ": " + e.what());
      }
      if (!file.is_object()) fail(ErrorCode::InvalidArgument, "config must be a JSON object");
      detail::resolve_paths(file, p.parent_path());
      cfg.merge_patch(file);
    }
    for (const auto& [key, value] : path_flags) {
      cfg["paths"][key] = value;
      detail::absolutize(cfg["paths"][key], fs::current_path());
    }
    for (const auto& fn : overrides) fn(cfg);
    cfg["command"] = command;
    workers = workers_flag ? std::max<std::size_t>(1, *workers_flag) : default_workers();
  }
};

inline SplitModel load_model(const json& cfg) {
  const auto type = detail::get<std::string>(cfg, "/model/type"_json_pointer);
  if (type == "planted") return PlantedModel(PlantedModelSpec::from_json(cfg.at("model").at("planted"))).split();
  if (type == "onnx")
    return load_split_model(detail::get<std::string>(cfg, "/model/g"_json_pointer), detail::get<std::string>(cfg, "/model/h"_json_pointer),
                            detail::get<std::string>(cfg, "/model/meta"_json_pointer));
  fail(ErrorCode::InvalidArgument, "unknown model type '" + type + "' (planted or onnx)");
}

inline SolverOptions solver_options(const json& cfg, std::size_t workers) {
  SolverOptions s;
  s.max_iters = detail::get<int>(cfg, "/solver/max_iters"_json_pointer);
  s.rel_tol = detail::get<double>(cfg, "/solver/rel_tol"_json_pointer);
  s.epsilon = detail::get<double>(cfg, "/solver/epsilon"_json_pointer);
  s.u_steps = detail::get<int>(cfg, "/solver/u_steps"_json_pointer);
  const auto init = detail::get<std::string>(cfg, "/solver/init"_json_pointer);
  if (init == "uniform")
    s.init = InitMethod::Uniform;
  else if (init == "kmeans")
    s.init = InitMethod::KMeans;
  else
    fail(ErrorCode::InvalidArgument, "unknown solver init '" + init + "'");
  s.seed = detail::get<std::uint64_t>(cfg, "/seeds/solver"_json_pointer);
  s.workers = workers;
  s.validate();
  return s;
}

inline SubsetSpec subset_spec(const json& cfg) {
  SubsetSpec s;
  s.r = detail::get<std::size_t>(cfg, "/subset/r"_json_pointer);
  s.attack_only = detail::get<bool>(cfg, "/subset/attack_only"_json_pointer);
  s.spoof_types = detail::get<std::vector<std::string>>(cfg, "/subset/spoof_types"_json_pointer);
  s.seed = detail::get<std::uint64_t>(cfg, "/seeds/subset"_json_pointer);
  return s;
}

inline RiseOptions rise_options(const json& cfg, std::size_t workers) {
  RiseOptions r;
  r.num_masks = detail::get<std::size_t>(cfg, "/rise/num_masks"_json_pointer);
  r.cells = detail::get<std::size_t>(cfg, "/rise/cells"_json_pointer);
  r.keep_prob = detail::get<double>(cfg, "/rise/keep_prob"_json_pointer);
  r.coverage_normalization = detail::get<bool>(cfg, "/rise/coverage_normalization"_json_pointer);
  r.batch = detail::get<std::size_t>(cfg, "/rise/batch"_json_pointer);
  r.seed = detail::get<std::uint64_t>(cfg, "/seeds/rise"_json_pointer);
  r.workers = workers;
  return r;
}

inline ImageBatch load_subset(const json& cfg) {
  return select_subset(load_manifest(detail::path_of(cfg, "manifest")), subset_spec(cfg));
}

inline fs::path prepare_out(const json& cfg) {
  const fs::path out = detail::path_of(cfg, "out");
  fs::create_directories(out);
  detail::write_json(out / "run_config.json", cfg);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_discover(const Context& ctx, std::ostream& log) {
  const json& cfg = ctx.cfg;
  const SplitModel model = load_model(cfg);
  const ImageBatch subset = load_subset(cfg);
  DiscoveryOptions o;
  o.k = detail::get<std::size_t>(cfg, "/k"_json_pointer);
  o.patch_spec = PatchSpec::from_json(cfg.at("patch_spec"));
  o.solver = solver_options(cfg, ctx.workers);
  o.exemplars = detail::get<std::size_t>(cfg, "/exemplars"_json_pointer);
  o.subset_seed = detail::get<std::uint64_t>(cfg, "/seeds/subset"_json_pointer);
  o.workers = ctx.workers;
  ConceptBank bank = discover_concepts(subset, model, o);
  bank.config = cfg;
  const fs::path out = prepare_out(cfg);
  save_bank(out, bank);
  log << "discovered " << bank.K() << " concepts from " << bank.aux_count << " patches of " << subset.count()
      << " images -> " << out.string() << "\n";
}

inline void cmd_importance(const Context& ctx, std::ostream& log) {
  const json& cfg = ctx.cfg;
  const ConceptBank bank = load_bank(detail::path_of(cfg, "bank"));
  const SplitModel model = load_model(cfg);
  const ImageBatch subset = load_subset(cfg);
  ImportanceOptions o;
  o.n = detail::get<std::size_t>(cfg, "/sobol/n"_json_pointer);
  o.seed = detail::get<std::uint64_t>(cfg, "/seeds/sobol"_json_pointer);
  const auto mode = detail::get<std::string>(cfg, "/sobol/mode"_json_pointer);
  if (mode == "per_image")
    o.mode = SobolMode::PerImage;
  else if (mode == "joint")
    o.mode = SobolMode::Joint;
  else
    fail(ErrorCode::InvalidArgument, "unknown sobol mode '" + mode + "'");
  o.solver = solver_options(cfg, ctx.workers);
  o.workers = ctx.workers;
  ImportanceReport report = sobol_importance(subset, model, bank, o);
  report.config = cfg;
  const fs::path out = prepare_out(cfg);
  detail::write_json(out / "importance.json", report.to_json());
  log << "importance over " << subset.count() << " images (" << report.skipped.size() << " skipped) -> "
      << (out / "importance.json").string() << "\n";
}

inline void cmd_explain(const Context& ctx, const std::vector<std::string>& images, std::ostream& log) {
  const json& cfg = ctx.cfg;
  const ConceptBank bank = load_bank(detail::path_of(cfg, "bank"));
  fs::path report_path = detail::path_of(cfg, "report");
  if (fs::is_directory(report_path)) report_path /= "importance.json";
  if (!fs::exists(report_path)) fail(ErrorCode::IoError, "no importance report at " + report_path.string());
  ImportanceReport report;
  try {
    report = ImportanceReport::from_json(json::parse(read_file(report_path)));
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "cannot parse " + report_path.string() + ": " + e.what());
  }
  const SplitModel model = load_model(cfg);

  ExplainOptions o;
  o.mode = parse_mode(detail::get<std::string>(cfg, "/explain/mode"_json_pointer));
  o.alpha = detail::get<double>(cfg, "/explain/alpha"_json_pointer);
  const auto score = detail::get<std::string>(cfg, "/explain/score"_json_pointer);
  if (score == "max")
    o.score = ActivationScore::Max;
  else if (score == "mean")
    o.score = ActivationScore::Mean;
  else
    fail(ErrorCode::InvalidArgument, "unknown activation score '" + score + "'");
  o.rise = rise_options(cfg, ctx.workers);
  o.solver = solver_options(cfg, ctx.workers);

  std::vector<std::pair<fs::path, std::string>> todo;  // file, image id
  if (!images.empty()) {
    for (const auto& p : images) todo.emplace_back(fs::absolute(p), image_id(fs::path(p).filename().string()));
  } else {
    const BenchmarkManifest m = load_manifest(detail::path_of(cfg, "manifest"));
    for (const auto& e : m.entries) todo.emplace_back(m.resolve(e.image), image_id(e.image));
  }
  const fs::path out = prepare_out(cfg);
  std::size_t activated = 0;
  for (const auto& [file, id] : todo) {
    const Tensor img = load_image(file);
    Explanation e = explain(img, id, model, bank, report, o);
    e.config = cfg;
    activated += e.activated.size();
    save_explanation(out / id, e, &img);
  }
  log << "explained " << todo.size() << " images, " << activated << " activated concepts -> " << out.string() << "\n";
}

inline void cmd_evaluate(const Context& ctx, std::ostream& log) {
  const json& cfg = ctx.cfg;
  const BenchmarkManifest m = load_manifest(detail::path_of(cfg, "manifest"));
  EvalReport r = evaluate_benchmark(m, detail::path_of(cfg, "explanations"), detail::get<double>(cfg, "/eval/x"_json_pointer),
                                    parse_selector(detail::get<std::string>(cfg, "/eval/selector"_json_pointer)), ctx.workers);
  r.config = cfg;
  const fs::path out = prepare_out(cfg);
  detail::write_json(out / "eval.json", r.to_json());
  write_file(out / "eval.csv", r.to_csv());
  log << "nIoU " << r.overall.mean_niou << " over " << r.overall.masks << " masks in " << r.overall.images << " images -> "
      << out.string() << "\n";
}

inline void cmd_fidelity(const Context& ctx, std::ostream& log) {
  const json& cfg = ctx.cfg;
  const SplitModel model = load_model(cfg);
  const BenchmarkManifest m = load_manifest(detail::path_of(cfg, "manifest"));
  const fs::path bundles = detail::path_of(cfg, "explanations");
  const auto steps = detail::get<std::size_t>(cfg, "/fidelity/steps"_json_pointer);
  const std::size_t cls = model.spoof_class_index();

  std::vector<double> del(steps + 1, 0.0), ins(steps + 1, 0.0);
  json per_image = json::array(), skipped = json::array();
  double del_auc = 0.0, ins_auc = 0.0;
  std::size_t scored = 0;
  std::vector<const ManifestEntry*> entries;
  for (const auto& e : m.entries)
    if (!e.masks.empty()) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) { return image_id(a->image) < image_id(b->image); });
  for (const ManifestEntry* e : entries) {
    const std::string id = image_id(e->image);
    const Explanation ex = load_explanation(bundles / id);
    if (ex.heatmaps.empty()) {
      skipped.push_back(id);
      continue;
    }
    const Tensor img = load_image(m.resolve(e->image));
    const Tensor& h0 = ex.heatmaps.front();
    const Tensor heat = h0.dim(0) == img.dim(0) && h0.dim(1) == img.dim(1) ? h0 : resize_bilinear(h0, img.dim(0), img.dim(1));
    const FidelityCurve d = deletion_curve(img, heat, model, cls, steps), in = insertion_curve(img, heat, model, cls, steps);
    for (std::size_t i = 0; i <= steps; ++i) {
      del[i] += d.scores[i];
      ins[i] += in.scores[i];
    }
    del_auc += d.auc;
    ins_auc += in.auc;
    ++scored;
    per_image.push_back({{"image_id", id}, {"concept", ex.activated.front().concept_index}, {"deletion_auc", d.auc},
                         {"insertion_auc", in.auc}});
  }
  if (scored == 0) fail(ErrorCode::EmptyInput, "no annotated image has an explanation heatmap");
  const double inv = 1.0 / static_cast<double>(scored);
  const fs::path out = prepare_out(cfg);
  std::ostringstream csv;
  csv << std::fixed;
  csv.precision(6);
  csv << "fraction,deletion,insertion\n";
  for (std::size_t i = 0; i <= steps; ++i) {
    csv.precision(2);
    csv << static_cast<double>(i) / static_cast<double>(steps) << ',';
    csv.precision(6);
    csv << del[i] * inv << ',' << ins[i] * inv << '\n';
  }
  write_file(out / "fidelity.csv", csv.str());
  detail::write_json(out / "fidelity.json", {{"steps", steps},
                                             {"images", scored},
                                             {"deletion_auc", del_auc * inv},
                                             {"insertion_auc", ins_auc * inv},
                                             {"per_image", per_image},
                                             {"skipped", skipped},
                                             {"config", cfg}});
  log << "deletion AUC " << del_auc * inv << ", insertion AUC " << ins_auc * inv << " over " << scored << " images -> "
      << out.string() << "\n";
}

inline void cmd_filter_frames(const Context& ctx, std::ostream& log) {
  const json& cfg = ctx.cfg;
  const fs::path dir = detail::path_of(cfg, "frames");
  if (!fs::is_directory(dir)) fail(ErrorCode::IoError, "frame directory " + dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir))
    if (f.is_regular_file() && sptd::detail::has_extension(f.path(), {".png", ".jpg", ".jpeg"})) files.push_back(f.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorCode::EmptyInput, "no frame images in " + dir.string());
  std::vector<Tensor> frames;
  for (const auto& f : files) {
    Tensor t = load_image(f);
    if (!frames.empty() && t.shape() != frames.front().shape()) t = resize_bilinear(t, frames.front().dim(0), frames.front().dim(1));
    frames.push_back(std::move(t));
  }
  const auto& s0 = frames.front().shape();
  Tensor stacked({frames.size(), s0[0], s0[1], 3});
  for (std::size_t i = 0; i < frames.size(); ++i)
    std::copy(frames[i].values().begin(), frames[i].values().end(),
              stacked.values().begin() + static_cast<std::ptrdiff_t>(i * frames[i].size()));

  const auto type = detail::get<std::string>(cfg, "/frames/detector/type"_json_pointer);
  FaceDetector detector;
  if (type == "all")
    detector = accept_all_detector();
  else if (type == "brightness")
    detector = brightness_detector(detail::get<double>(cfg, "/frames/detector/lo"_json_pointer),
                                   detail::get<double>(cfg, "/frames/detector/hi"_json_pointer));
  else
    fail(ErrorCode::InvalidArgument, "unknown face detector '" + type + "' (all or brightness)");
  const FrameSelection s = filter_frames(stacked, detail::get<std::size_t>(cfg, "/frames/l"_json_pointer),
                                         detail::get<std::size_t>(cfg, "/frames/iter_count"_json_pointer),
                                         histogram_embedder(detail::get<std::size_t>(cfg, "/frames/bins"_json_pointer)), detector,
                                         detail::get<std::uint64_t>(cfg, "/seeds/frames"_json_pointer), ctx.workers);
  json j = s.to_json();
  json names = json::array();
  for (auto i : s.selected_indices) names.push_back(files[i].filename().generic_string());
  j["files"] = names;
  j["config"] = cfg;
  const fs::path out = prepare_out(cfg);
  detail::write_json(out / "selection.json", j);
  log << "selected " << s.selected_indices.size() << " of " << files.size() << " frames, score " << s.dissimilarity_score << "\n";
}

// Planted fixture: model (planted spec and its ONNX export), attack frames
// grouped into videos with one mask per pattern, bona fide frames, a
// manifest and a ready-to-use config.json.
inline void cmd_synth(const Context& ctx, std::ostream& log) {
  const json& cfg = ctx.cfg;
  const PlantedModelSpec spec = PlantedModelSpec::from_json(cfg.at("model").at("planted"));
  const PlantedModel pm(spec);
  const auto videos = detail::get<std::size_t>(cfg, "/synth/videos"_json_pointer);
  const auto per_video = detail::get<std::size_t>(cfg, "/synth/frames_per_video"_json_pointer);
  const auto live = detail::get<std::size_t>(cfg, "/synth/live"_json_pointer);
  if (videos * per_video == 0) fail(ErrorCode::InvalidArgument, "synth needs at least one attack frame");
  const std::uint64_t seed = derive_seed(detail::get<std::uint64_t>(cfg, "/seeds/synth"_json_pointer), "synth");

  const fs::path out = prepare_out(cfg);
  fs::create_directories(out / "model");
  fs::create_directories(out / "images");
  fs::create_directories(out / "masks");
  detail::write_json(out / "planted_spec.json", spec.to_json());
  const auto exported = pm.export_onnx();
  write_file(out / "model" / "g.onnx", exported.g);
  write_file(out / "model" / "h.onnx", exported.h);
  detail::write_json(out / "model" / "meta.json", exported.meta);

  static const std::array<const char*, 2> kTypes{"print", "replay"};
  std::string manifest;
  auto num = [](std::size_t v, int width) {
    std::string s = std::to_string(v);
    return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
  };
  for (std::size_t v = 0; v < videos; ++v)
    for (std::size_t f = 0; f < per_video; ++f) {
      const PlantedSample s = pm.sample(seed, v * per_video + f);
      const std::string stem = "v" + num(v, 3) + "_f" + num(f, 2);
      save_image_png(out / "images" / (stem + ".png"), s.image);
      json masks = json::array();
      for (const auto& p : s.patterns) {
        const std::string mp = "masks/" + stem + "_p" + std::to_string(p.k) + ".png";
        save_mask(out / mp, pm.region_mask(p));
        masks.push_back({{"trace", "pattern" + std::to_string(p.k)}, {"path", mp}});
      }
      manifest += json{{"image", "images/" + stem + ".png"}, {"spoof_type", kTypes[v % kTypes.size()]},
                       {"video", "v" + num(v, 3)}, {"masks", masks}}.dump() + "\n";
    }
  for (std::size_t i = 0; i < live; ++i) {
    const std::string stem = "live_" + num(i, 3);
    save_image_png(out / "images" / (stem + ".png"), pm.render({}, derive_seed(seed, "live" + std::to_string(i))));
    manifest += json{{"image", "images/" + stem + ".png"}, {"spoof_type", "live"}, {"video", stem}}.dump() + "\n";
  }
  write_file(out / "manifest.jsonl", manifest);

  json run = cfg;
  run.erase("command");
  run["model"] = {{"type", "onnx"}, {"planted", spec.to_json()}, {"g", "model/g.onnx"}, {"h", "model/h.onnx"}, {"meta", "model/meta.json"}};
  run["paths"] = {{"manifest", "manifest.jsonl"}, {"bank", ""}, {"report", ""}, {"explanations", ""}, {"frames", ""}, {"out", ""}};
  detail::write_json(out / "config.json", run);
  log << "wrote " << videos * per_video << " attack and " << live << " bona fide images -> " << out.string() << "\n";
}

// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Concept discovery, importance and attribution for split image classifiers", "sptd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sptd 1.0.0");

  Context ctx;
  std::vector<std::string> images;
  std::function<void()> action;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", ctx.config_path, "Run configuration JSON (flags override it)");
    sub->add_option("--workers", ctx.workers_flag, "Worker threads (default: SPTD_WORKERS or all cores)")->check(CLI::PositiveNumber);
  };
  auto path_flag = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>("--" + key, [&ctx, key](const std::string& v) { ctx.path_flags.emplace_back(key, v); }, help);
  };
  auto value_flag = [&]<class T>(CLI::App* sub, const std::string& name, const char* pointer, const std::string& help, T*) {
    return sub->add_option_function<T>(
        name, [&ctx, ptr = json::json_pointer(pointer)](const T& v) { ctx.overrides.push_back([ptr, v](json& c) { c[ptr] = v; }); },
        help);
  };
  auto seed_flag = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&ctx](std::uint64_t s) {
          ctx.overrides.push_back([s](json& c) {
            for (auto& [k, v] : c["seeds"].items()) v = s;
          });
        },
        "Set every named seed");
  };
  auto model_flags = [&](CLI::App* sub) {
    sub->add_option_function<std::string>(
        "--model-dir",
        [&ctx](const std::string& d) {
          const fs::path p = fs::absolute(d);
          ctx.overrides.push_back([p](json& c) {
            c["model"]["type"] = "onnx";
            c["model"]["g"] = (p / "g.onnx").generic_string();
            c["model"]["h"] = (p / "h.onnx").generic_string();
            c["model"]["meta"] = (p / "meta.json").generic_string();
          });
        },
        "Directory holding g.onnx, h.onnx and meta.json");
  };
  auto bind = [&](CLI::App* sub, std::string name, std::function<void(std::ostream&)> fn) {
    sub->callback([&ctx, &action, name, fn, &out] {
      action = [&ctx, name, fn, &out] {
        ctx.build(name);
        fn(out);
      };
    });
  };

  auto* discover = app.add_subcommand("discover", "Discover a concept bank from the attack subset");
  common(discover);
  model_flags(discover);
  path_flag(discover, "manifest", "Benchmark manifest (JSONL)");
  path_flag(discover, "out", "Output directory for bank.f32t and bank.json");
  value_flag(discover, "--k", "/k", "Number of concepts", static_cast<std::size_t*>(nullptr));
  value_flag(discover, "--frames-per-video", "/subset/r", "Frames sampled per attack video", static_cast<std::size_t*>(nullptr));
  seed_flag(discover);
  bind(discover, "discover", [&](std::ostream& o) { cmd_discover(ctx, o); });

  auto* importance = app.add_subcommand("importance", "Sobol total indices of the concepts");
  common(importance);
  model_flags(importance);
  path_flag(importance, "manifest", "Benchmark manifest (JSONL)");
  path_flag(importance, "bank", "Concept bank directory");
  path_flag(importance, "out", "Output directory for importance.json");
  value_flag(importance, "--n", "/sobol/n", "Sobol base sample size (power of two)", static_cast<std::size_t*>(nullptr));
  seed_flag(importance);
  bind(importance, "importance", [&](std::ostream& o) { cmd_importance(ctx, o); });

  auto* explain_cmd = app.add_subcommand("explain", "Explanation bundles for benchmark images");
  common(explain_cmd);
  model_flags(explain_cmd);
  path_flag(explain_cmd, "manifest", "Benchmark manifest (JSONL); every entry is explained");
  path_flag(explain_cmd, "bank", "Concept bank directory");
  path_flag(explain_cmd, "report", "Importance report (file or directory)");
  path_flag(explain_cmd, "out", "Output directory for the bundles");
  explain_cmd->add_option("--image", images, "Explain these image files instead of the manifest");
  value_flag(explain_cmd, "--mode", "/explain/mode", "Attribution mode", static_cast<std::string*>(nullptr))
      ->check(CLI::IsMember({"vanilla", "crise"}));
  value_flag(explain_cmd, "--alpha", "/explain/alpha", "Activation threshold", static_cast<double*>(nullptr));
  value_flag(explain_cmd, "--masks", "/rise/num_masks", "RISE masks per image", static_cast<std::size_t*>(nullptr));
  seed_flag(explain_cmd);
  bind(explain_cmd, "explain", [&](std::ostream& o) { cmd_explain(ctx, images, o); });

  auto* evaluate = app.add_subcommand("evaluate", "nIoU of explanation bundles against benchmark masks");
  common(evaluate);
  path_flag(evaluate, "manifest", "Benchmark manifest (JSONL)");
  path_flag(evaluate, "explanations", "Directory of explanation bundles");
  path_flag(evaluate, "out", "Output directory for eval.json and eval.csv");
  value_flag(evaluate, "--x", "/eval/x", "Top pixel fraction", static_cast<double*>(nullptr));
  value_flag(evaluate, "--selector", "/eval/selector", "Heatmap selector", static_cast<std::string*>(nullptr))
      ->check(CLI::IsMember({"best", "mean"}));
  bind(evaluate, "evaluate", [&](std::ostream& o) { cmd_evaluate(ctx, o); });

  auto* fidelity = app.add_subcommand("fidelity", "Deletion and insertion curves of the top heatmaps");
  common(fidelity);
  model_flags(fidelity);
  path_flag(fidelity, "manifest", "Benchmark manifest (JSONL)");
  path_flag(fidelity, "explanations", "Directory of explanation bundles");
  path_flag(fidelity, "out", "Output directory for fidelity.csv and fidelity.json");
  value_flag(fidelity, "--steps", "/fidelity/steps", "Curve steps", static_cast<std::size_t*>(nullptr));
  bind(fidelity, "fidelity", [&](std::ostream& o) { cmd_fidelity(ctx, o); });

  auto* frames = app.add_subcommand("filter-frames", "Pick mutually dissimilar face frames of a video");
  common(frames);
  path_flag(frames, "frames", "Directory of frame images (sorted by name)");
  path_flag(frames, "out", "Output directory for selection.json");
  value_flag(frames, "--l", "/frames/l", "Frames to keep", static_cast<std::size_t*>(nullptr));
  value_flag(frames, "--iter", "/frames/iter_count", "Random draws", static_cast<std::size_t*>(nullptr));
  seed_flag(frames);
  bind(frames, "filter-frames", [&](std::ostream& o) { cmd_filter_frames(ctx, o); });

  auto* synth = app.add_subcommand("synth", "Write a planted-concept fixture");
  common(synth);
  path_flag(synth, "out", "Output directory");
  value_flag(synth, "--videos", "/synth/videos", "Attack videos", static_cast<std::size_t*>(nullptr));
  value_flag(synth, "--live", "/synth/live", "Bona fide frames", static_cast<std::size_t*>(nullptr));
  seed_flag(synth);
  bind(synth, "synth", [&](std::ostream& o) { cmd_synth(ctx, o); });

  std::vector<const char*> argv{"sptd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    err << error_name(ErrorCode::IoError) << ": " << e.what() << "\n";
    return exit_code(ErrorCode::IoError);
  } catch (const json::exception& e) {
    err << error_name(ErrorCode::InvalidArgument) << ": " << e.what() << "\n";
    return exit_code(ErrorCode::InvalidArgument);
  }
}

}  // namespace sptd::cli
