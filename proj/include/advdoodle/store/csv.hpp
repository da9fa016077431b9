#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "advdoodle/error.hpp"

namespace advdoodle::store {

/// RFC 4180 quoting: fields holding a comma, quote or line break are quoted.
inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_line(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += csv_escape(fields[i]);
  }
  return line + "\n";
}

/// Two decimals, the style of published score tables.
inline std::string format_score(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string format_real(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

/// Append-only writer. The header is written when the file is created and
/// must match when an existing file is reopened. Rows are serialized.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header)
      : path_(path), header_(std::move(header)) {
    const bool exists = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
    if (exists) {
      std::ifstream in(path);
      std::string first;
      std::getline(in, first);
      check(first + "\n" == csv_line(header_), ErrorKind::invalid_input,
            "existing CSV " + path.string() + " has a different header");
    } else if (path.has_parent_path()) {
      std::filesystem::create_directories(path.parent_path());
    }
    out_.open(path, std::ios::binary | std::ios::app);
    check(static_cast<bool>(out_), ErrorKind::io, "cannot open " + path.string());
    if (!exists) write(csv_line(header_));
  }

  void row(const std::vector<std::string>& fields) {
    check(fields.size() == header_.size(), ErrorKind::invalid_argument,
          "CSV row has " + std::to_string(fields.size()) + " fields, header has " +
              std::to_string(header_.size()));
    std::lock_guard lock(mu_);
    write(csv_line(fields));
  }

  const std::vector<std::string>& header() const { return header_; }

 private:
  void write(const std::string& s) {
    out_ << s;
    out_.flush();
    check(static_cast<bool>(out_), ErrorKind::io, "write failed for " + path_.string());
  }

  std::filesystem::path path_;
  std::vector<std::string> header_;
  std::ofstream out_;
  std::mutex mu_;
};

inline const std::vector<std::string>& outcome_header() {
  static const std::vector<std::string> h = {"image", "class_id", "arch_id", "L", "eot",
                                             "success", "s_min", "trials", "first_pass_at", "seed"};
  return h;
}

inline const std::vector<std::string>& transfer_header() {
  static const std::vector<std::string> h = {"source", "target", "L", "eot", "n_total", "n_success",
                                             "score"};
  return h;
}

inline const std::vector<std::string>& iteration_header() {
  static const std::vector<std::string> h = {"image", "trial", "iteration", "loss", "f_s",
                                             "soft_size", "size_term", "validation_passed", "s_min"};
  return h;
}

}  // namespace advdoodle::store
