#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"

#include "advdoodle/attack.hpp"
#include "advdoodle/error.hpp"
#include "advdoodle/store/dataset.hpp"
#include "advdoodle/synth.hpp"
#include "advdoodle/tinynet/preprocess.hpp"
#include "advdoodle/tinynet/train.hpp"

namespace advdoodle::store {

using nlohmann::json;

namespace detail {

// Reads optional fields from one JSON object and refuses keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    check(j_.is_object(), ErrorKind::invalid_input, where_ + " must be an object");
  }

  template <typename V>
  void opt(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::invalid_input, where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      check(seen_.count(k) > 0, ErrorKind::invalid_input, "unknown field '" + k + "' in " + where_);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const RasterConfig& c) {
  return {{"width_px", c.width_px}, {"softness_px", c.softness_px}, {"segments", c.segments}};
}

inline json to_json(const EotConfig& c) {
  return {{"max_rot", c.max_rot},
          {"max_trans", c.max_trans},
          {"min_scale", c.min_scale},
          {"max_scale", c.max_scale},
          {"rng_seed", c.rng_seed}};
}

inline json to_json(const AttackConfig& c) {
  return {{"curves", c.curves},
          {"points_per_curve", c.points_per_curve},
          {"raster", to_json(c.raster)},
          {"transform_batch", c.transform_batch},
          {"iterations", c.iterations},
          {"alpha", c.alpha},
          {"lr", c.lr},
          {"eot", to_json(c.eot)},
          {"max_restarts", c.max_restarts},
          {"seed", c.seed},
          {"hard_threshold", c.hard_threshold}};
}

inline json to_json(const tinynet::PreprocessSpec& p) {
  return {{"resize_to", p.resize_to}, {"center_crop", p.center_crop}};
}

inline void from_json_strict(const json& j, RasterConfig& c, const std::string& where = "raster") {
  detail::StrictObject o(j, where);
  o.opt("width_px", c.width_px);
  o.opt("softness_px", c.softness_px);
  o.opt("segments", c.segments);
  o.finish();
}

inline void from_json_strict(const json& j, EotConfig& c, const std::string& where = "eot") {
  detail::StrictObject o(j, where);
  o.opt("max_rot", c.max_rot);
  o.opt("max_trans", c.max_trans);
  o.opt("min_scale", c.min_scale);
  o.opt("max_scale", c.max_scale);
  o.opt("rng_seed", c.rng_seed);
  o.finish();
}

inline void from_json_strict(const json& j, AttackConfig& c, const std::string& where = "attack") {
  detail::StrictObject o(j, where);
  o.opt("curves", c.curves);
  o.opt("points_per_curve", c.points_per_curve);
  if (const auto* r = o.sub("raster")) from_json_strict(*r, c.raster, where + ".raster");
  o.opt("transform_batch", c.transform_batch);
  o.opt("iterations", c.iterations);
  o.opt("alpha", c.alpha);
  o.opt("lr", c.lr);
  if (const auto* e = o.sub("eot")) from_json_strict(*e, c.eot, where + ".eot");
  o.opt("max_restarts", c.max_restarts);
  o.opt("seed", c.seed);
  o.opt("hard_threshold", c.hard_threshold);
  o.finish();
}

inline void from_json_strict(const json& j, tinynet::PreprocessSpec& p,
                             const std::string& where = "preprocess") {
  detail::StrictObject o(j, where);
  o.opt("resize_to", p.resize_to);
  o.opt("center_crop", p.center_crop);
  o.finish();
}

/// Everything one pipeline run needs. Missing keys keep their defaults,
/// unknown keys are refused so typos cannot silently fall back.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path dataset_root = "data/shapes";
  std::filesystem::path out_dir = "runs";
  synth::SynthConfig synth{};
  SplitSpec split{};
  tinynet::PreprocessSpec preprocess{};
  std::string arch = "cnn-a";
  tinynet::TrainConfig train{};
  AttackConfig attack{};
  std::map<std::string, std::filesystem::path> models;  // arch_id -> model file
  int threads = 1;
  int simulated_replicas = 5;

  std::filesystem::path model_path(const std::string& arch_id) const {
    const auto it = models.find(arch_id);
    return it != models.end() ? it->second : out_dir / (arch_id + ".model");
  }
};

inline json to_json(const RunConfig& c) {
  json models = json::object();
  for (const auto& [k, v] : c.models) models[k] = v.generic_string();
  return {{"seed", c.seed},
          {"dataset_root", c.dataset_root.generic_string()},
          {"out_dir", c.out_dir.generic_string()},
          {"synth",
           {{"classes", c.synth.classes},
            {"per_class", c.synth.per_class},
            {"image_size", c.synth.image_size},
            {"supersample", c.synth.supersample}}},
          {"split", {{"train", c.split.train}, {"val", c.split.val}}},
          {"preprocess", to_json(c.preprocess)},
          {"arch", c.arch},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"lr", c.train.adam.lr}}},
          {"attack", to_json(c.attack)},
          {"models", models},
          {"threads", c.threads},
          {"simulated_replicas", c.simulated_replicas}};
}

/// Seeds for the synthetic set, the split and training all derive from `seed`.
inline void apply_seed(RunConfig& c) {
  c.synth.seed = derive_seed(c.seed, 0x5e7);
  c.split.seed = derive_seed(c.seed, 0x5b1);
  c.train.seed = derive_seed(c.seed, 0x7a1);
  c.attack.seed = derive_seed(c.seed, 0xa77);
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::StrictObject o(j, "config");
  o.opt("seed", c.seed);
  std::string s;
  if (j.contains("dataset_root")) {
    o.opt("dataset_root", s);
    c.dataset_root = s;
  } else {
    o.sub("dataset_root");
  }
  if (j.contains("out_dir")) {
    o.opt("out_dir", s);
    c.out_dir = s;
  } else {
    o.sub("out_dir");
  }
  if (const auto* sj = o.sub("synth")) {
    detail::StrictObject so(*sj, "config.synth");
    so.opt("classes", c.synth.classes);
    so.opt("per_class", c.synth.per_class);
    so.opt("image_size", c.synth.image_size);
    so.opt("supersample", c.synth.supersample);
    so.finish();
  }
  if (const auto* sp = o.sub("split")) {
    detail::StrictObject so(*sp, "config.split");
    so.opt("train", c.split.train);
    so.opt("val", c.split.val);
    so.finish();
  }
  if (const auto* p = o.sub("preprocess")) from_json_strict(*p, c.preprocess, "config.preprocess");
  o.opt("arch", c.arch);
  if (const auto* t = o.sub("train")) {
    detail::StrictObject to(*t, "config.train");
    to.opt("epochs", c.train.epochs);
    to.opt("batch_size", c.train.batch_size);
    to.opt("lr", c.train.adam.lr);
    to.finish();
  }
  if (const auto* a = o.sub("attack")) from_json_strict(*a, c.attack, "config.attack");
  const bool explicit_attack_seed = j.contains("attack") && j.at("attack").contains("seed");
  if (const auto* m = o.sub("models")) {
    check(m->is_object(), ErrorKind::invalid_input, "config.models must be an object");
    for (const auto& [k, v] : m->items()) c.models[k] = v.get<std::string>();
  }
  o.opt("threads", c.threads);
  o.opt("simulated_replicas", c.simulated_replicas);
  o.finish();
  const auto attack_seed = c.attack.seed;
  apply_seed(c);
  if (explicit_attack_seed) c.attack.seed = attack_seed;
  c.attack.validate();
  c.preprocess.validate();
  c.split.validate();
  return c;
}

inline json parse_json_file(const std::filesystem::path& path, ErrorKind on_bad = ErrorKind::invalid_input) {
  std::ifstream in(path);
  check(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw Error(on_bad, path.string() + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(parse_json_file(path));
}

/// Seeded initialization plus training on the manifest's train/val splits.
inline tinynet::Model<float> train_classifier(const RunConfig& c, const DatasetManifest& m,
                                              const std::string& arch,
                                              tinynet::TrainReport* report = nullptr) {
  const auto train_set = load_split(m, Split::train, c.preprocess);
  const auto val_set = load_split(m, Split::val, c.preprocess);
  auto model = tinynet::make_model<float>(arch, static_cast<int>(m.classes.size()), c.preprocess.center_crop);
  Rng rng(derive_seed(c.train.seed, 0x1417));
  model.init_weights(rng);
  const auto rep = tinynet::train<float>(model, train_set, val_set, c.train);
  if (report) *report = rep;
  return model;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << text;
  check(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

}  // namespace advdoodle::store
