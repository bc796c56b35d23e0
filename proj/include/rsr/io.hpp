#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rsr/diagnostics.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts are unsupported");

namespace rsr {

// ---------------------------------------------------------------------------
// Columnar binary dataset format
//
// header:  magic "RSRD", version u32, D u32, N u32, flags u32
//          (flag bit 0: label block present, bit 1: epsilon present)
// payload: float64 points, column-major; then u8 labels (0=outlier,
//          1=inlier) when flagged; then float64 epsilon when flagged.
// All fields little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace detail

inline void write_dataset(std::ostream& os, const Dataset& data,
                          std::optional<double> epsilon = std::nullopt) {
  os.write("RSRD", 4);
  detail::put_u32(os, 1u);
  detail::put_u32(os, static_cast<std::uint32_t>(data.ambient_dim()));
  detail::put_u32(os, static_cast<std::uint32_t>(data.count()));
  std::uint32_t flags = 0;
  if (data.has_labels()) flags |= 1u;
  if (epsilon) flags |= 2u;
  detail::put_u32(os, flags);
  os.write(reinterpret_cast<const char*>(data.points().data()),
           static_cast<std::streamsize>(sizeof(double)) * data.points().size());
  if (data.has_labels())
    os.write(reinterpret_cast<const char*>(data.labels()->data()),
             static_cast<std::streamsize>(data.labels()->size()));
  if (epsilon) os.write(reinterpret_cast<const char*>(&*epsilon), sizeof(double));
  if (!os) throw IoError("write_dataset: stream failure");
}

inline void write_dataset_file(const std::string& path, const Dataset& data,
                               std::optional<double> epsilon = std::nullopt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_dataset_file: cannot open " + path);
  write_dataset(os, data, epsilon);
}

struct LoadedDataset {
  Dataset data;
  std::optional<double> epsilon;
};

inline LoadedDataset read_dataset(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "RSRD", 4) != 0)
    throw IoError("read_dataset: bad magic (not an RSRD file)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1u) throw IoError("read_dataset: unsupported version");
  const std::uint32_t D = detail::get_u32(is);
  const std::uint32_t N = detail::get_u32(is);
  const std::uint32_t flags = detail::get_u32(is);
  if (D == 0 || N == 0 || D > (1u << 20) || N > (1u << 28))
    throw IoError("read_dataset: implausible dimensions");
  Eigen::MatrixXd pts(D, N);
  is.read(reinterpret_cast<char*>(pts.data()),
          static_cast<std::streamsize>(sizeof(double)) * pts.size());
  std::optional<Labels> labels;
  if (flags & 1u) {
    Labels lab(N);
    is.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(N));
    labels = std::move(lab);
  }
  std::optional<double> epsilon;
  if (flags & 2u) {
    double e = 0.0;
    is.read(reinterpret_cast<char*>(&e), sizeof e);
    epsilon = e;
  }
  if (!is) throw IoError("read_dataset: truncated file");
  return LoadedDataset{Dataset(std::move(pts), std::move(labels)), epsilon};
}

inline LoadedDataset read_dataset_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_dataset_file: cannot open " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// CSV export: one point per row, label column last (when present)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void export_dataset_csv(std::ostream& os, const Dataset& data) {
  for (int i = 0; i < data.count(); ++i) {
    for (int j = 0; j < data.ambient_dim(); ++j) {
      if (j) os << ',';
      os << detail::format_double(data.points()(j, i));
    }
    if (data.has_labels()) os << ',' << static_cast<int>((*data.labels())[i]);
    os << '\n';
  }
  if (!os) throw IoError("export_dataset_csv: stream failure");
}

// ---------------------------------------------------------------------------
// Ground-truth sidecar (JSON): planted basis and noise level.  Labels travel
// in the dataset file itself.
// ---------------------------------------------------------------------------

inline nlohmann::json truth_to_json(const GroundTruth& truth) {
  nlohmann::json j;
  j["ambient_dim"] = truth.basis.ambient_dim();
  j["dim"] = truth.basis.dim();
  std::vector<double> cols(truth.basis.cols().data(),
                           truth.basis.cols().data() + truth.basis.cols().size());
  j["basis_column_major"] = cols;
  if (truth.noise_epsilon) j["noise_epsilon"] = *truth.noise_epsilon;
  return j;
}

inline GroundTruth truth_from_json(const nlohmann::json& j, const Dataset& data) {
  if (!data.has_labels())
    throw NeedsGroundTruth("truth_from_json: dataset carries no labels");
  const int D = j.at("ambient_dim").get<int>();
  const int d = j.at("dim").get<int>();
  const auto cols = j.at("basis_column_major").get<std::vector<double>>();
  if (static_cast<int>(cols.size()) != D * d)
    throw IoError("truth_from_json: basis size mismatch");
  Eigen::MatrixXd u(D, d);
  std::memcpy(u.data(), cols.data(), cols.size() * sizeof(double));
  GroundTruth t{SubspaceBasis(std::move(u)), *data.labels(), std::nullopt};
  if (j.contains("noise_epsilon")) t.noise_epsilon = j["noise_epsilon"].get<double>();
  return t;
}

inline void write_truth_file(const std::string& path, const GroundTruth& truth) {
  std::ofstream os(path);
  if (!os) throw IoError("write_truth_file: cannot open " + path);
  os << truth_to_json(truth).dump(2) << '\n';
}

inline GroundTruth read_truth_file(const std::string& path, const Dataset& data) {
  std::ifstream is(path);
  if (!is) throw NeedsGroundTruth("read_truth_file: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return truth_from_json(j, data);
}

// ---------------------------------------------------------------------------
// DiagnosticsReport JSON: flat object, keys matching field names, infinities
// serialized as the strings "inf"/"-inf".
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json num_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double num_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return infinity();
    if (s == "-inf") return -infinity();
    throw IoError("report: unrecognized numeric marker '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace detail

inline nlohmann::json report_to_json(const DiagnosticsReport& r) {
  nlohmann::json j;
  j["dssnr"] = detail::num_to_json(r.dssnr);
  j["kappa1"] = detail::num_to_json(r.kappa1);
  j["kappa2"] = detail::num_to_json(r.kappa2);
  j["kappa3"] = detail::num_to_json(r.kappa3);
  j["kappa_in_star"] = detail::num_to_json(r.kappa_in_star);
  j["A_stat"] = detail::num_to_json(r.A_stat);
  j["R_stat"] = detail::num_to_json(r.R_stat);
  j["S_stat"] = detail::num_to_json(r.S_stat);
  j["C"] = detail::num_to_json(r.C);
  j["C0"] = detail::num_to_json(r.C0);
  j["condition_rhs"] = detail::num_to_json(r.condition_rhs);
  j["condition_margin"] = detail::num_to_json(r.condition_margin);
  return j;
}

inline DiagnosticsReport report_from_json(const nlohmann::json& j) {
  DiagnosticsReport r;
  r.dssnr = detail::num_from_json(j.at("dssnr"));
  r.kappa1 = detail::num_from_json(j.at("kappa1"));
  r.kappa2 = detail::num_from_json(j.at("kappa2"));
  r.kappa3 = detail::num_from_json(j.at("kappa3"));
  r.kappa_in_star = detail::num_from_json(j.at("kappa_in_star"));
  r.A_stat = detail::num_from_json(j.at("A_stat"));
  r.R_stat = detail::num_from_json(j.at("R_stat"));
  r.S_stat = detail::num_from_json(j.at("S_stat"));
  r.C = detail::num_from_json(j.at("C"));
  r.C0 = detail::num_from_json(j.at("C0"));
  r.condition_rhs = detail::num_from_json(j.at("condition_rhs"));
  r.condition_margin = detail::num_from_json(j.at("condition_margin"));
  return r;
}

}  // namespace rsr
