#pragma once

#include "cimic/datamodel.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace cimic {

namespace fs = std::filesystem;

namespace io {

static_assert(std::endian::native == std::endian::little,
              "binary payloads are read and written as native little-endian floats");

inline void write_f32(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::raise<IoError>("cannot open '", path.string(), "' for writing");
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) detail::raise<IoError>("failed writing '", path.string(), "'");
}

inline std::vector<float> read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) detail::raise<IoError>("cannot open '", path.string(), "'");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0)
    detail::raise<FormatError>("'", path.string(), "' has ", bytes, " bytes, not a whole number of f32 values");
  std::vector<float> values(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) detail::raise<IoError>("failed reading '", path.string(), "'");
  return values;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) detail::raise<IoError>("cannot open '", path.string(), "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::raise<IoError>("cannot open '", path.string(), "' for writing");
  out << text;
  if (!out) detail::raise<IoError>("failed writing '", path.string(), "'");
}

inline nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    detail::raise<FormatError>("'", path.string(), "' is not valid JSON: ", e.what());
  }
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    detail::raise<IoError>("cannot create directory '", dir.string(), "'", ec ? ": " + ec.message() : "");
}

/// Row-major f32 payload of an instance-major matrix.
inline std::vector<float> to_row_major(const MatrixF& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data(), m.rows(),
                                                                                    m.cols()) = m;
  return out;
}

inline MatrixF from_row_major(const std::vector<float>& data, Index rows, Index cols) {
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), rows, cols);
}

}  // namespace io

namespace detail {

template <typename T>
T manifest_field(const nlohmann::json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) raise<FormatError>("'", where.string(), "': missing field '", key, "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    raise<FormatError>("'", where.string(), "': field '", key, "' has the wrong type");
  }
}

}  // namespace detail

/// Reads a dataset directory holding manifest.json and its payload files.
inline MultiViewDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) detail::raise<IoError>("missing file '", manifest_path.string(), "'");
  const nlohmann::json manifest = io::read_json(manifest_path);
  if (!manifest.is_object()) detail::raise<FormatError>("'", manifest_path.string(), "' is not an object");

  MultiViewDataset ds;
  ds.name = detail::manifest_field<std::string>(manifest, "name", manifest_path);
  const auto n = detail::manifest_field<long long>(manifest, "num_instances", manifest_path);
  if (n < 1) detail::raise<FormatError>("'", manifest_path.string(), "': num_instances must be positive");
  const auto views = detail::manifest_field<nlohmann::json>(manifest, "views", manifest_path);
  if (!views.is_array()) detail::raise<FormatError>("'", manifest_path.string(), "': 'views' must be an array");

  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& entry = views[v];
    const auto file = detail::manifest_field<std::string>(entry, "file", manifest_path);
    const auto dim = detail::manifest_field<long long>(entry, "dim", manifest_path);
    const auto dtype = entry.value("dtype", std::string("f32"));
    const auto layout = entry.value("layout", std::string("row-major"));
    if (dtype != "f32") detail::raise<FormatError>("view ", v, ": unsupported dtype '", dtype, "'");
    if (layout != "row-major") detail::raise<FormatError>("view ", v, ": unsupported layout '", layout, "'");
    if (dim < 1) detail::raise<FormatError>("view ", v, ": dim must be positive");
    const fs::path payload = dir / file;
    if (!fs::exists(payload)) detail::raise<IoError>("missing file '", payload.string(), "'");
    const std::vector<float> data = io::read_f32(payload);
    const auto expected = static_cast<std::size_t>(n * dim);
    if (data.size() != expected)
      detail::raise<FormatError>("'", payload.string(), "': expected ", n, "x", dim, " = ", expected,
                                 " values, found ", data.size(),
                                 data.size() % static_cast<std::size_t>(dim) == 0
                                     ? detail::concat(" (", data.size() / static_cast<std::size_t>(dim), "x", dim, ")")
                                     : std::string());
    MatrixF m = io::from_row_major(data, n, dim);
    if (!m.allFinite())
      for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c)
          if (!std::isfinite(m(r, c)))
            detail::raise<DataError>("'", payload.string(), "': non-finite value at row ", r, ", column ", c);
    ds.views.push_back(std::move(m));
  }

  if (manifest.contains("labels_file") && !manifest["labels_file"].is_null()) {
    const fs::path path = dir / detail::manifest_field<std::string>(manifest, "labels_file", manifest_path);
    std::istringstream in(io::read_text(path));
    std::vector<int> labels;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      try {
        std::size_t used = 0;
        labels.push_back(std::stoi(line, &used));
        if (line.find_first_not_of(" \r\t", used) != std::string::npos) throw std::invalid_argument(line);
      } catch (const std::exception&) {
        detail::raise<FormatError>("'", path.string(), "': bad label line '", line, "'");
      }
    }
    if (static_cast<long long>(labels.size()) != n)
      detail::raise<FormatError>("'", path.string(), "': expected ", n, " labels, found ", labels.size());
    ds.labels = std::move(labels);
  }

  const auto a = static_cast<Index>(ds.views.size());
  if (manifest.contains("presence_file") && !manifest["presence_file"].is_null()) {
    const fs::path path = dir / detail::manifest_field<std::string>(manifest, "presence_file", manifest_path);
    std::istringstream in(io::read_text(path));
    PresenceBits bits(n, a);
    std::string line;
    Index row = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (row >= n) detail::raise<FormatError>("'", path.string(), "': more than ", n, " rows");
      std::istringstream cells(line);
      std::string cell;
      Index col = 0;
      while (std::getline(cells, cell, ',')) {
        if (col >= a || (cell != "0" && cell != "1"))
          detail::raise<FormatError>("'", path.string(), "': row ", row, " must hold ", a, " 0/1 values");
        bits(row, col++) = cell == "1";
      }
      if (col != a)
        detail::raise<FormatError>("'", path.string(), "': row ", row, " has ", col, " columns, expected ", a);
      ++row;
    }
    if (row != n) detail::raise<FormatError>("'", path.string(), "': expected ", n, " rows, found ", row);
    ds.presence = PresenceMask(std::move(bits));
  } else {
    ds.presence = PresenceMask::all_present(n, a);
  }
  ds.validate();
  zero_absent_rows(ds);
  return ds;
}

/// Writes `ds` as a manifest directory; returns the directory.
inline fs::path save_dataset(const MultiViewDataset& ds, const fs::path& dir) {
  ds.validate();
  io::ensure_directory(dir);
  nlohmann::json manifest;
  manifest["name"] = ds.name;
  manifest["num_instances"] = ds.instances();
  manifest["views"] = nlohmann::json::array();
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const std::string file = "view" + std::to_string(v) + ".f32";
    io::write_f32(dir / file, io::to_row_major(ds.views[v]));
    manifest["views"].push_back({{"file", file}, {"dim", ds.views[v].cols()}, {"dtype", "f32"}, {"layout", "row-major"}});
  }
  if (ds.labels) {
    std::ostringstream out;
    for (int l : *ds.labels) out << l << '\n';
    io::write_text(dir / "labels.txt", out.str());
    manifest["labels_file"] = "labels.txt";
  }
  if (!ds.presence.all_complete()) {
    std::ostringstream out;
    for (Index r = 0; r < ds.instances(); ++r) {
      for (Index v = 0; v < ds.num_views(); ++v) out << (v ? "," : "") << (ds.presence.present(r, v) ? 1 : 0);
      out << '\n';
    }
    io::write_text(dir / "presence.csv", out.str());
    manifest["presence_file"] = "presence.csv";
  }
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return dir;
}

}  // namespace cimic
