#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "advdoodle/error.hpp"
#include "advdoodle/rng.hpp"
#include "advdoodle/store/image_io.hpp"
#include "advdoodle/synth.hpp"
#include "advdoodle/tinynet/preprocess.hpp"

namespace advdoodle::store {

enum class Split { train, val, pool };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::pool: return "pool";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "pool") return Split::pool;
  throw Error(ErrorKind::invalid_argument, "unknown split '" + s + "'");
}

/// Per-class fractions; whatever is left after train and val goes to the attack pool.
struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    check(train >= 0.0 && val >= 0.0 && train + val <= 1.0 + 1e-12, ErrorKind::invalid_argument,
          "split fractions must be non-negative and sum to at most 1");
  }
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

struct DatasetEntry {
  std::string file;  // relative to the root, generic format
  int class_id = 0;  // 1-based
  Split split = Split::train;
  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> classes;  // classes[id - 1]
  std::vector<DatasetEntry> entries;  // class-major, files sorted within a class
  SplitSpec split;

  std::vector<const DatasetEntry*> select(Split s) const {
    std::vector<const DatasetEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }
  std::size_t count(Split s) const { return select(s).size(); }
  std::filesystem::path path_of(const DatasetEntry& e) const { return root / e.file; }
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

namespace detail {

inline std::string fold_case(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

inline bool has_png_extension(const std::filesystem::path& p) {
  return fold_case(p.extension().string()) == ".png";
}

}  // namespace detail

/// Counts per split for one class of n files.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitSpec& spec) {
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(spec.val * static_cast<double>(n))));
  const auto t = std::min(n, n_train);
  return {t, n_val, n - t - n_val};
}

/// Directory-per-class PNG scan. Classes and files are taken in lexicographic
/// order; each class is shuffled by its own seeded stream before splitting.
inline DatasetManifest scan_dataset(const std::filesystem::path& root, const SplitSpec& spec = {}) {
  namespace fs = std::filesystem;
  spec.validate();
  check(fs::is_directory(root), ErrorKind::invalid_dataset,
        "dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& d : fs::directory_iterator(root))
    if (d.is_directory() && d.path().filename().string().front() != '.') class_dirs.push_back(d.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  check(class_dirs.size() >= 2, ErrorKind::invalid_dataset, "dataset needs at least 2 class directories");

  DatasetManifest m;
  m.root = root;
  m.split = spec;
  std::set<std::string> seen;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    const auto name = class_dirs[c].filename().string();
    check(seen.insert(detail::fold_case(name)).second, ErrorKind::invalid_dataset,
          "duplicate class name '" + name + "'");
    std::vector<std::string> files;
    for (const auto& f : fs::directory_iterator(class_dirs[c])) {
      if (!f.is_regular_file() || !detail::has_png_extension(f.path())) continue;
      check(looks_like_png(f.path()), ErrorKind::invalid_dataset,
            "unreadable image " + f.path().string());
      files.push_back(fs::relative(f.path(), root).generic_string());
    }
    check(!files.empty(), ErrorKind::invalid_dataset, "class directory '" + name + "' has no images");
    std::sort(files.begin(), files.end());
    m.classes.push_back(name);

    std::vector<std::size_t> order(files.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(spec.seed, 0x5eed0000ULL + c));
    rng.shuffle(order.begin(), order.end());
    const auto counts = split_counts(files.size(), spec);
    std::vector<Split> assign(files.size(), Split::pool);
    for (std::size_t k = 0; k < order.size(); ++k)
      assign[order[k]] = k < counts[0] ? Split::train : k < counts[0] + counts[1] ? Split::val : Split::pool;
    for (std::size_t i = 0; i < files.size(); ++i)
      m.entries.push_back({files[i], static_cast<int>(c) + 1, assign[i]});
  }
  return m;
}

/// Loads one entry through preprocessing; the label is the 0-based class index.
inline RgbImage load_entry(const DatasetManifest& m, const DatasetEntry& e,
                           const tinynet::PreprocessSpec& pre) {
  RgbImage raw = read_png(m.path_of(e));
  raw.label = e.class_id - 1;
  RgbImage out = tinynet::preprocess(raw, pre);
  out.label = e.class_id - 1;
  return out;
}

inline std::vector<RgbImage> load_split(const DatasetManifest& m, Split s,
                                        const tinynet::PreprocessSpec& pre) {
  std::vector<RgbImage> out;
  for (const auto* e : m.select(s)) out.push_back(load_entry(m, *e, pre));
  return out;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["root"] = m.root.generic_string();
  j["classes"] = m.classes;
  j["split"] = {{"train", m.split.train}, {"val", m.split.val}, {"seed", m.split.seed}};
  auto& entries = j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"file", e.file}, {"class_id", e.class_id}, {"split", to_string(e.split)}});
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    DatasetManifest m;
    m.root = j.at("root").get<std::string>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.split.train = j.at("split").at("train").get<double>();
    m.split.val = j.at("split").at("val").get<double>();
    m.split.seed = j.at("split").at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries"))
      m.entries.push_back({e.at("file").get<std::string>(), e.at("class_id").get<int>(),
                           split_from_string(e.at("split").get<std::string>())});
    for (const auto& e : m.entries)
      check(e.class_id >= 1 && e.class_id <= static_cast<int>(m.classes.size()),
            ErrorKind::corrupt_file, "manifest class id out of range");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::corrupt_file, std::string("bad manifest: ") + e.what());
  }
}

/// Renders the synthetic shape set to root/<shape>/img_NNNN.png.
inline void write_synthetic(const std::filesystem::path& root, const synth::SynthConfig& cfg) {
  namespace fs = std::filesystem;
  const auto images = synth::generate(cfg);
  fs::create_directories(root);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int c = *images[i].label;
    const int k = static_cast<int>(i) % cfg.per_class;
    const auto dir = root / synth::shape_names()[static_cast<std::size_t>(c)];
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d.png", k);
    write_png(dir / name, images[i]);
  }
}

}  // namespace advdoodle::store
