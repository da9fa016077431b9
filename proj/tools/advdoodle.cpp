// advdoodle: command-line front end for the doodle pipeline.
//
//   advdoodle gen-dataset            render the synthetic shape set
//   advdoodle train --arch cnn-a     train a classifier on the train split
//   advdoodle attack --L 3           attack every image of the attack pool
//   advdoodle validate --attack F    robustness of one stored attack
//   advdoodle gradcam --attack F     saliency before and after the doodle
//   advdoodle transfer --source cnn-a --target cnn-b
//   advdoodle ablate                 EOT on vs off under simulated tracing
//   advdoodle export --attack F      SVG of a stored attack
//   advdoodle serve                  HTTP backend for the replication UI
//
// Failures print one JSON line on stderr, {"error": {...}}, and exit nonzero.

#include <cmath>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "advdoodle/analysis.hpp"
#include "advdoodle/attack.hpp"
#include "advdoodle/service/http.hpp"
#include "advdoodle/service/service.hpp"
#include "advdoodle/store/attack_file.hpp"
#include "advdoodle/store/config.hpp"
#include "advdoodle/store/csv.hpp"
#include "advdoodle/store/dataset.hpp"
#include "advdoodle/store/image_io.hpp"
#include "advdoodle/store/svg.hpp"
#include "advdoodle/tinynet/model_io.hpp"
#include "advdoodle/tinynet/train.hpp"

namespace fs = std::filesystem;
using namespace advdoodle;
using nlohmann::json;

namespace {

/// An Error plus what the user should do about it.
struct Failure {
  ErrorKind kind;
  std::string message;
  std::string hint;
};

[[noreturn]] void fail(ErrorKind kind, std::string message, std::string hint = {}) {
  throw Failure{kind, std::move(message), std::move(hint)};
}

int report(const Failure& f) {
  json e = {{"kind", std::string(to_string(f.kind))}, {"message", f.message}};
  if (!f.hint.empty()) e["hint"] = f.hint;
  std::cerr << json{{"error", e}}.dump() << std::endl;
  return 2;
}

// Flags shared by the subcommands. Unset ones leave the config file alone.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> curves, iterations, threads;
  std::optional<double> alpha;
  std::optional<bool> eot;
  std::string model, dataset, out, arch;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--seed", o.seed, "top-level seed; every other seed derives from it");
  sub->add_option("--dataset", o.dataset, "dataset root (directory per class)");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--threads", o.threads, "worker threads");
}

void add_attack_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--L", o.curves, "number of curves");
  sub->add_option("--n-itr", o.iterations, "optimization steps per trial");
  sub->add_option("--alpha", o.alpha, "size penalty weight");
  sub->add_flag("--eot,!--no-eot", o.eot, "random affine transforms during optimization");
}

void add_model_flags(CLI::App* sub, Overrides& o) {
  sub->add_option("--arch", o.arch, "classifier architecture (cnn-a, cnn-b)");
  sub->add_option("--model", o.model, "model file for --arch");
}

store::RunConfig resolve(const Overrides& o) {
  json file = json::object();
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) fail(ErrorKind::not_found, "config file " + o.config + " does not exist",
                                    "pass an existing --config or omit it to use the defaults");
    file = store::parse_json_file(o.config);
  }
  // --seed acts as if it were written in the file.
  if (o.seed) file["seed"] = *o.seed;
  store::RunConfig c = store::run_config_from_json(file);
  if (!o.dataset.empty()) c.dataset_root = o.dataset;
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.arch.empty()) c.arch = o.arch;
  if (!o.model.empty()) c.models[c.arch] = o.model;
  if (o.threads) c.threads = *o.threads;
  if (o.curves) c.attack.curves = *o.curves;
  if (o.iterations) c.attack.iterations = *o.iterations;
  if (o.alpha) c.attack.alpha = *o.alpha;
  if (o.eot && !*o.eot) c.attack.eot = EotConfig::identity();
  c.attack.validate();
  return c;
}

store::DatasetManifest open_dataset(const store::RunConfig& c) {
  if (!fs::is_directory(c.dataset_root))
    fail(ErrorKind::not_found, "dataset root " + c.dataset_root.string() + " does not exist",
         "run `advdoodle gen-dataset` or pass --dataset");
  return store::scan_dataset(c.dataset_root, c.split);
}

tinynet::Model<float> open_model(const store::RunConfig& c, const std::string& arch) {
  const auto path = c.model_path(arch);
  if (!fs::exists(path))
    fail(ErrorKind::not_found, "model file " + path.string() + " does not exist",
         "run `advdoodle train --arch " + arch + "` or pass --model");
  return tinynet::load_model(path, arch);
}

store::AttackFile open_attack(const std::string& path) {
  if (path.empty()) fail(ErrorKind::invalid_argument, "no attack file given", "pass --attack FILE");
  if (!fs::exists(path))
    fail(ErrorKind::not_found, "attack file " + path + " does not exist", "run `advdoodle attack` first");
  return store::load_attack(path);
}

std::string eot_tag(const AttackConfig& a) { return a.eot.is_identity() ? "noeot" : "eot"; }

fs::path attack_dir(const store::RunConfig& c, const std::string& arch, const AttackConfig& a) {
  return c.out_dir / "attacks" / (arch + "-L" + std::to_string(a.curves) + "-" + eot_tag(a));
}

std::string stem_of(const std::string& image_ref) {
  std::string s = fs::path(image_ref).replace_extension().generic_string();
  for (auto& ch : s)
    if (ch == '/') ch = '_';
  return s;
}

struct Pool {
  std::vector<RgbImage> images;
  std::vector<std::uint64_t> ids;  // position in the manifest
  std::vector<const store::DatasetEntry*> entries;
};

Pool load_pool(const store::DatasetManifest& m, const store::RunConfig& c, int limit) {
  Pool p;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].split != store::Split::pool) continue;
    if (limit > 0 && static_cast<int>(p.images.size()) >= limit) break;
    p.images.push_back(store::load_entry(m, m.entries[i], c.preprocess));
    p.ids.push_back(i);
    p.entries.push_back(&m.entries[i]);
  }
  if (p.images.empty()) fail(ErrorKind::invalid_dataset, "the attack pool is empty", "lower split.train/val");
  return p;
}

RgbImage load_attack_image(const store::RunConfig& c, const store::AttackFile& a) {
  auto img = tinynet::preprocess(store::read_png(c.dataset_root / a.image_ref), c.preprocess);
  if (img.canvas() != a.canvas)
    fail(ErrorKind::invalid_input, "image " + a.image_ref + " does not match the attack canvas",
         "use the preprocessing the attack was made with");
  img.label = a.class_id - 1;
  return img;
}

// --- subcommands -----------------------------------------------------------

int cmd_gen_dataset(const Overrides& o) {
  const auto c = resolve(o);
  store::write_synthetic(c.dataset_root, c.synth);
  std::cout << json{{"dataset", c.dataset_root.generic_string()},
                    {"classes", c.synth.classes},
                    {"images", c.synth.classes * c.synth.per_class}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const Overrides& o) {
  const auto c = resolve(o);
  const auto m = open_dataset(c);
  tinynet::TrainReport rep;
  const auto model = store::train_classifier(c, m, c.arch, &rep);
  const auto path = c.model_path(c.arch);
  tinynet::save_model(model, path);
  std::cout << json{{"model", path.generic_string()},
                    {"arch", c.arch},
                    {"epochs", rep.epochs},
                    {"train_accuracy", rep.train_accuracy},
                    {"val_accuracy", rep.val_accuracy}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_attack(const Overrides& o, int limit, bool log_iterations) {
  const auto c = resolve(o);
  const auto m = open_dataset(c);
  const auto model = open_model(c, c.arch);
  const auto pool = load_pool(m, c, limit);
  const auto records = run_attack_batch<float>(model, pool.images, pool.ids, c.attack,
                                               static_cast<unsigned>(std::max(1, c.threads)));
  const auto dir = attack_dir(c, c.arch, c.attack);
  store::CsvWriter outcomes(c.out_dir / "outcomes.csv", store::outcome_header());
  std::optional<store::CsvWriter> iterations;
  if (log_iterations) iterations.emplace(c.out_dir / "iterations.csv", store::iteration_header());
  int successes = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const auto& e = *pool.entries[i];
    AttackConfig cfg = c.attack;
    cfg.seed = image_seed(c.attack.seed, pool.ids[i]);
    store::save_attack(dir / (stem_of(e.file) + ".json"),
                       store::make_attack_file(rec, cfg, e.file, e.class_id, pool.images[i].canvas(), c.arch));
    successes += rec.success;
    outcomes.row({e.file, std::to_string(e.class_id), c.arch, std::to_string(cfg.curves),
                  cfg.eot.is_identity() ? "false" : "true", rec.success ? "true" : "false",
                  rec.success ? store::format_real(rec.s_min) : "", std::to_string(rec.restarts_used),
                  rec.first_pass_at ? std::to_string(*rec.first_pass_at) : "", std::to_string(cfg.seed)});
    if (iterations)
      for (const auto& it : rec.iteration_log)
        iterations->row({e.file, std::to_string(it.trial), std::to_string(it.iteration),
                         store::format_real(it.loss), store::format_real(it.f_s),
                         store::format_real(it.soft_size), it.size_term ? "true" : "false",
                         it.validation_passed ? "true" : "false",
                         std::isfinite(it.s_min) ? store::format_real(it.s_min) : ""});
  }
  std::cout << json{{"arch", c.arch},
                    {"L", c.attack.curves},
                    {"eot", !c.attack.eot.is_identity()},
                    {"images", records.size()},
                    {"successes", successes},
                    {"attacks", dir.generic_string()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_validate(const Overrides& o, const std::string& attack_path, int draws) {
  const auto c = resolve(o);
  const auto a = open_attack(attack_path);
  if (!a.success || !a.best_v) fail(ErrorKind::refused, "attack " + attack_path + " did not succeed");
  const auto model = open_model(c, a.arch_id);
  const auto x = load_attack_image(c, a);
  Rng rng(derive_seed(c.seed, 0x7a11d));
  const double rate = robustness_rate(model, x, a.class_id - 1, *a.best_v, a.config.eot, draws, a.config.raster, rng);
  std::cout << json{{"attack", attack_path}, {"draws", draws}, {"robustness", rate}}.dump() << "\n";
  return 0;
}

RgbImage heat_overlay(const RgbImage& x, const SaliencyMap& map) {
  RgbImage out = x;
  const std::size_t plane = x.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    const float h = static_cast<float>(map.upsampled[i]);
    out.data[i] = 0.5f * out.data[i] + 0.5f * h;
    out.data[plane + i] *= 0.5f;
    out.data[2 * plane + i] = 0.5f * out.data[2 * plane + i] + 0.5f * (1.0f - h);
  }
  return out;
}

int cmd_gradcam(const Overrides& o, const std::string& attack_path) {
  const auto c = resolve(o);
  const auto a = open_attack(attack_path);
  if (!a.best_v) fail(ErrorKind::refused, "attack " + attack_path + " has no doodle");
  const auto model = open_model(c, a.arch_id);
  const auto x = load_attack_image(c, a);
  const int s = a.class_id - 1;
  const auto xd = doodle(x, *a.best_v, AffineParams::identity(canvas_center(x.canvas())), a.config.raster);
  const int predicted = tinynet::predict(model, xd);
  const auto clean = gradcam(model, x, s);
  const auto doodled = gradcam(model, xd, predicted);
  const auto shift = saliency_shift(clean, doodled);
  const auto dir = c.out_dir / "gradcam";
  fs::create_directories(dir);
  const auto stem = stem_of(a.image_ref);
  store::write_png(dir / (stem + "_clean.png"), heat_overlay(x, clean));
  store::write_png(dir / (stem + "_doodled.png"), heat_overlay(xd, doodled));
  std::cout << json{{"attack", attack_path},
                    {"true_class_id", a.class_id},
                    {"doodled_class_id", predicted + 1},
                    {"saliency_shift", shift ? json(*shift) : json(nullptr)},
                    {"overlays", dir.generic_string()}}
                   .dump()
            << "\n";
  return 0;
}

std::vector<store::AttackFile> read_attack_dir(const fs::path& dir) {
  if (!fs::is_directory(dir))
    fail(ErrorKind::not_found, "attack directory " + dir.string() + " does not exist",
         "run `advdoodle attack` with the same --arch, --L and --eot/--no-eot first");
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir))
    if (f.path().extension() == ".json") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  std::vector<store::AttackFile> out;
  for (const auto& f : files) out.push_back(store::load_attack(f));
  return out;
}

int cmd_transfer(const Overrides& o, const std::string& source, const std::string& target) {
  const auto c = resolve(o);
  const auto src = open_model(c, source);
  const auto dst = open_model(c, target);
  const auto attacks = read_attack_dir(attack_dir(c, source, c.attack));
  std::vector<RgbImage> images;
  images.reserve(attacks.size());
  for (const auto& a : attacks) images.push_back(load_attack_image(c, a));
  std::vector<TransferCase> cases;
  for (std::size_t i = 0; i < attacks.size(); ++i)
    cases.push_back({&images[i], attacks[i].class_id - 1, attacks[i].success, attacks[i].best_v});
  const auto rep = transfer_eval<float>(cases, src, dst, c.attack.raster, c.attack.curves, !c.attack.eot.is_identity());
  store::CsvWriter csv(c.out_dir / "transfer.csv", store::transfer_header());
  csv.row({rep.source, rep.target, std::to_string(rep.curves), rep.eot_enabled ? "true" : "false",
           std::to_string(rep.n_total), std::to_string(rep.n_success),
           rep.score ? store::format_score(*rep.score) : ""});
  std::cout << json{{"source", rep.source},
                    {"target", rep.target},
                    {"L", rep.curves},
                    {"eot", rep.eot_enabled},
                    {"n_total", rep.n_total},
                    {"n_success", rep.n_success},
                    {"score", rep.score ? json(*rep.score) : json(nullptr)}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_ablate(const Overrides& o, int limit) {
  const auto c = resolve(o);
  const auto m = open_dataset(c);
  const auto model = open_model(c, c.arch);
  const auto pool = load_pool(m, c, limit);
  AttackConfig on = c.attack;
  if (on.eot.is_identity()) on.eot = EotConfig{};
  ReplicationConfig rc;
  rc.replicas = c.simulated_replicas;
  const auto rep = ablation_run<float>(model, pool.images, pool.ids, on, without_eot(on), rc,
                                       derive_seed(c.seed, 0xab1a7e),
                                       static_cast<unsigned>(std::max(1, c.threads)));
  store::CsvWriter csv(c.out_dir / "ablation.csv",
                       {"arch", "L", "eot", "images", "computer_success", "replicated_success", "replicas_total"});
  json arms = json::array();
  for (const auto* arm : {&rep.eot_on, &rep.eot_off}) {
    csv.row({c.arch, std::to_string(on.curves), arm->eot_enabled ? "true" : "false",
             std::to_string(pool.images.size()), std::to_string(arm->computer_success),
             std::to_string(arm->replicated_success), std::to_string(arm->replicas_total)});
    arms.push_back({{"eot", arm->eot_enabled},
                    {"computer_success", arm->computer_success},
                    {"replicated_success", arm->replicated_success},
                    {"replicas_total", arm->replicas_total}});
  }
  std::cout << json{{"arch", c.arch}, {"L", on.curves}, {"images", pool.images.size()}, {"arms", arms}}.dump()
            << "\n";
  return 0;
}

int cmd_export(const Overrides& o, const std::string& attack_path, const std::string& out_file) {
  (void)o;
  const auto svg = store::export_svg(open_attack(attack_path));
  if (out_file.empty() || out_file == "-") {
    std::cout << svg;
  } else {
    store::write_text(out_file, svg);
  }
  return 0;
}

httplib::Server* running_server = nullptr;

int cmd_serve(const Overrides& o, const std::string& attacks_root, const std::string& host, int port) {
  const auto c = resolve(o);
  const auto m = open_dataset(c);
  const fs::path root = attacks_root.empty() ? c.out_dir / "attacks" : fs::path(attacks_root);
  if (!fs::is_directory(root))
    fail(ErrorKind::not_found, "attack directory " + root.string() + " does not exist", "run `advdoodle attack` first");
  std::map<std::string, store::AttackFile> attacks;
  std::map<std::string, tinynet::Model<float>> models;
  for (const auto& f : fs::recursive_directory_iterator(root)) {
    if (f.path().extension() != ".json") continue;
    auto a = store::load_attack(f.path());
    if (!a.success) continue;
    if (!models.count(a.arch_id)) models.emplace(a.arch_id, open_model(c, a.arch_id));
    attacks.emplace(fs::relative(f.path(), root).replace_extension().generic_string(), std::move(a));
  }
  service::ServiceConfig sc;
  sc.dataset_root = c.dataset_root;
  sc.preprocess = c.preprocess;
  sc.class_names = m.classes;
  sc.log_dir = c.out_dir / "sessions";
  service::DoodleService svc(sc, std::move(models), std::move(attacks));
  httplib::Server server;
  service::mount_routes(server, svc);
  running_server = &server;
  std::signal(SIGINT, [](int) { if (running_server) running_server->stop(); });
  std::signal(SIGTERM, [](int) { if (running_server) running_server->stop(); });
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorKind::io, "cannot listen on " + host + ":" + std::to_string(port), "pick another --port");
  std::cout << json{{"listening", host + ":" + std::to_string(bound)}}.dump() << std::endl;
  server.listen_after_bind();
  running_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial doodles: optimize, validate and replicate stroke attacks"};
  app.require_subcommand(1);
  Overrides o;
  int limit = 0, draws = 100, port = 8080;
  bool log_iterations = false;
  std::string attack_path, out_file, source = "cnn-a", target = "cnn-b", attacks_root, host = "127.0.0.1";

  auto* gen = app.add_subcommand("gen-dataset", "render the synthetic shape dataset");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "train a classifier");
  add_common(train, o);
  add_model_flags(train, o);

  auto* attack = app.add_subcommand("attack", "attack the attack-pool split");
  add_common(attack, o);
  add_model_flags(attack, o);
  add_attack_flags(attack, o);
  attack->add_option("--limit", limit, "attack at most this many pool images");
  attack->add_flag("--log-iterations", log_iterations, "also write iterations.csv");

  auto* validate = app.add_subcommand("validate", "robustness of a stored attack");
  add_common(validate, o);
  add_model_flags(validate, o);
  validate->add_option("--attack", attack_path, "attack file")->required();
  validate->add_option("--draws", draws, "random transforms to test");

  auto* cam = app.add_subcommand("gradcam", "saliency before and after a stored attack");
  add_common(cam, o);
  add_model_flags(cam, o);
  cam->add_option("--attack", attack_path, "attack file")->required();

  auto* transfer = app.add_subcommand("transfer", "score source attacks on another classifier");
  add_common(transfer, o);
  add_attack_flags(transfer, o);
  transfer->add_option("--source", source, "architecture the attacks were made on");
  transfer->add_option("--target", target, "architecture to evaluate them on");

  auto* ablate = app.add_subcommand("ablate", "EOT on vs off with simulated replication");
  add_common(ablate, o);
  add_model_flags(ablate, o);
  add_attack_flags(ablate, o);
  ablate->add_option("--limit", limit, "use at most this many pool images");

  auto* exp = app.add_subcommand("export", "write a stored attack as SVG");
  exp->add_option("--attack", attack_path, "attack file")->required();
  exp->add_option("--out", out_file, "output file (stdout when omitted)");

  auto* serve = app.add_subcommand("serve", "HTTP backend for the replication UI");
  add_common(serve, o);
  serve->add_option("--attacks", attacks_root, "directory of attack files (default <out>/attacks)");
  serve->add_option("--host", host, "listen address");
  serve->add_option("--port", port, "listen port (0 picks a free one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report({ErrorKind::invalid_argument, e.what(), "see `advdoodle --help`"});
    return 1;
  }

  try {
    if (*gen) return cmd_gen_dataset(o);
    if (*train) return cmd_train(o);
    if (*attack) return cmd_attack(o, limit, log_iterations);
    if (*validate) return cmd_validate(o, attack_path, draws);
    if (*cam) return cmd_gradcam(o, attack_path);
    if (*transfer) return cmd_transfer(o, source, target);
    if (*ablate) return cmd_ablate(o, limit);
    if (*exp) return cmd_export(o, attack_path, out_file);
    if (*serve) return cmd_serve(o, attacks_root, host, port);
  } catch (const Failure& f) {
    return report(f);
  } catch (const Error& e) {
    std::string msg = e.what();
    const std::string prefix = std::string(to_string(e.kind())) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg.erase(0, prefix.size());
    return report({e.kind(), msg, {}});
  } catch (const std::exception& e) {
    return report({ErrorKind::io, e.what(), {}});
  }
  return 1;
}
