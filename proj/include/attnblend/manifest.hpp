#ifndef ATTNBLEND_MANIFEST_HPP
#define ATTNBLEND_MANIFEST_HPP

// Tensor manifest shared with capture tooling:
//   {"run_id": str, "prompts": {...}, "entries": [{"name", "path", "shape",
//    "dtype", "layer", "timestep"}]}
// Relative entry paths resolve against the manifest's directory.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnblend/attention_select.hpp"
#include "attnblend/error.hpp"
#include "attnblend/tensor_io.hpp"

namespace attnblend {

struct ManifestEntry {
  std::string name;
  std::string path;
  std::vector<std::size_t> shape;
  std::string dtype;  // "float32" or "float64"
  std::string layer;
  long long timestep = 0;
};

struct Manifest {
  std::string run_id;
  nlohmann::json prompts = nlohmann::json::object();
  std::vector<ManifestEntry> entries;
};

inline std::string dtype_name(Dtype d) { return d == Dtype::Float32 ? "float32" : "float64"; }

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["run_id"] = m.run_id;
  j["prompts"] = m.prompts;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back({{"name", e.name},
                            {"path", e.path},
                            {"shape", e.shape},
                            {"dtype", e.dtype},
                            {"layer", e.layer},
                            {"timestep", e.timestep}});
  return j;
}

inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.run_id = j.at("run_id").get<std::string>();
    m.prompts = j.value("prompts", nlohmann::json::object());
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.name = e.at("name").get<std::string>();
      entry.path = e.at("path").get<std::string>();
      entry.shape = e.at("shape").get<std::vector<std::size_t>>();
      entry.dtype = e.at("dtype").get<std::string>();
      entry.layer = e.value("layer", std::string{});
      entry.timestep = e.value("timestep", 0LL);
      m.entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestParse, std::string("manifest: ") + e.what());
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()));
}

struct ManifestIssue {
  std::string entry;
  ErrorCode code;
  std::string message;
};

/// Loads every listed tensor and checks shape, dtype and, for 3-D (H x N x M)
/// attention stacks, row stochasticity. Returns one issue per failing entry.
inline std::vector<ManifestIssue> validate_manifest(const Manifest& m, const std::filesystem::path& base_dir,
                                                    double row_tolerance = 1e-3) {
  std::vector<ManifestIssue> issues;
  for (const auto& e : m.entries) {
    const std::filesystem::path rel(e.path);
    const std::filesystem::path p = rel.is_absolute() ? rel : base_dir / rel;
    try {
      const auto arr = load_array(p);
      if (arr.shape != e.shape)
        fail(ErrorCode::ShapeMismatch, "shape " + shape_string(arr.shape) + " but manifest lists " +
                                           shape_string(e.shape));
      if (dtype_name(arr.dtype) != e.dtype)
        fail(ErrorCode::UnsupportedDtype, "dtype " + dtype_name(arr.dtype) + " but manifest lists " + e.dtype);
      if (arr.ndim() == 3) {
        const AttentionStack stack(arr, {1, arr.shape[1]});
        if (const auto bad = stack.count_invalid_rows(row_tolerance))
          fail(ErrorCode::NonStochasticRow, std::to_string(bad) + " attention rows are not distributions");
      }
    } catch (const Error& err) {
      issues.push_back({e.name, err.code(), err.detail()});
    }
  }
  return issues;
}

inline std::vector<ManifestIssue> validate_manifest(const std::filesystem::path& manifest_path,
                                                    double row_tolerance = 1e-3) {
  return validate_manifest(load_manifest(manifest_path), manifest_path.parent_path(), row_tolerance);
}

}  // namespace attnblend

#endif  // ATTNBLEND_MANIFEST_HPP
