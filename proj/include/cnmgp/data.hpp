#pragma once

// Multi-output datasets with per-entry missingness, the three synthetic
// generators, CSV ingestion and emission, standardization and hold-out splits.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cnmgp/errors.hpp"
#include "cnmgp/numcore.hpp"

namespace cnmgp {

struct OutputScaling {
  double mean = 0.0;
  double sd = 1.0;
};

/// Inputs X (N×P), outputs Y (N×D) and an observation mask. Unobserved Y
/// entries hold NaN and are never read. A dataset built without a mask treats
/// every entry as observed and skips mask lookups entirely.
class Dataset {
 public:
  Dataset() = default;

  Dataset(Matrix x, Matrix y) : x_(std::move(x)), y_(std::move(y)) {
    check_shapes();
    for (double v : y_.data())
      if (!std::isfinite(v)) throw DataError("Dataset: mask-free construction requires finite outputs");
    finalize();
  }

  Dataset(Matrix x, Matrix y, std::vector<std::uint8_t> mask)
      : x_(std::move(x)), y_(std::move(y)), mask_(std::move(mask)), has_mask_(true) {
    check_shapes();
    if (mask_.size() != y_.size()) throw DimensionMismatch("Dataset: mask size differs from Y");
    for (std::size_t k = 0; k < mask_.size(); ++k) {
      if (mask_[k]) {
        if (!std::isfinite(y_.data()[k])) throw DataError("Dataset: observed entry is not finite");
      } else {
        y_.data()[k] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    finalize();
  }

  std::size_t num_rows() const noexcept { return x_.rows(); }
  std::size_t num_inputs() const noexcept { return x_.cols(); }
  std::size_t num_outputs() const noexcept { return y_.cols(); }
  bool has_mask() const noexcept { return has_mask_; }

  bool observed(std::size_t n, std::size_t d) const noexcept {
    return !has_mask_ || mask_[n * y_.cols() + d] != 0;
  }

  double y(std::size_t n, std::size_t d) const noexcept {
    assert(observed(n, d) && "read of an unobserved output entry");
    return y_(n, d);
  }

  const Matrix& X() const noexcept { return x_; }
  /// Raw outputs; unobserved entries are NaN.
  const Matrix& Y() const noexcept { return y_; }

  std::vector<std::uint8_t> mask() const {
    if (has_mask_) return mask_;
    return std::vector<std::uint8_t>(y_.size(), 1);
  }

  std::size_t observed_count() const noexcept { return total_observed_; }
  std::size_t observed_count(std::size_t d) const noexcept { return per_output_observed_[d]; }
  std::size_t row_observed_count(std::size_t n) const noexcept { return per_row_observed_[n]; }

  /// Rows with at least one observed entry, ascending.
  std::vector<std::size_t> active_rows() const {
    std::vector<std::size_t> rows;
    for (std::size_t n = 0; n < num_rows(); ++n)
      if (per_row_observed_[n] > 0) rows.push_back(n);
    return rows;
  }

  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  /// Transform applied to each output: stored = (original − mean) / sd.
  std::vector<OutputScaling> scaling;

 private:
  void check_shapes() const {
    if (x_.rows() != y_.rows()) throw DimensionMismatch("Dataset: X and Y row counts differ");
    for (double v : x_.data())
      if (!std::isfinite(v)) throw DataError("Dataset: inputs must be finite");
  }

  void finalize() {
    const std::size_t n_rows = y_.rows();
    const std::size_t d_out = y_.cols();
    per_output_observed_.assign(d_out, 0);
    per_row_observed_.assign(n_rows, 0);
    total_observed_ = 0;
    for (std::size_t n = 0; n < n_rows; ++n)
      for (std::size_t d = 0; d < d_out; ++d)
        if (observed(n, d)) {
          ++per_output_observed_[d];
          ++per_row_observed_[n];
          ++total_observed_;
        }
    input_names.resize(x_.cols());
    for (std::size_t p = 0; p < x_.cols(); ++p)
      if (input_names[p].empty()) input_names[p] = x_.cols() == 1 ? "t" : "x" + std::to_string(p + 1);
    output_names.resize(d_out);
    for (std::size_t d = 0; d < d_out; ++d)
      if (output_names[d].empty()) output_names[d] = "y" + std::to_string(d + 1);
    scaling.resize(d_out);
  }

  Matrix x_;
  Matrix y_;
  std::vector<std::uint8_t> mask_;
  bool has_mask_ = false;
  std::vector<std::size_t> per_output_observed_;
  std::vector<std::size_t> per_row_observed_;
  std::size_t total_observed_ = 0;
};

/// Copy of `ds` with new outputs/mask but the same inputs and metadata.
inline Dataset with_outputs(const Dataset& ds, Matrix y, std::vector<std::uint8_t> mask) {
  Dataset out(ds.X(), std::move(y), std::move(mask));
  out.input_names = ds.input_names;
  out.output_names = ds.output_names;
  out.scaling = ds.scaling;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic systems

enum class SyntheticKind { LF, HF, VF };

inline std::string to_string(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::LF: return "LF";
    case SyntheticKind::HF: return "HF";
    case SyntheticKind::VF: return "VF";
  }
  return "?";
}

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
  if (s == "LF") return SyntheticKind::LF;
  if (s == "HF") return SyntheticKind::HF;
  if (s == "VF") return SyntheticKind::VF;
  throw ConfigError("unknown synthetic kind '" + s + "' (expected LF, HF or VF)");
}

struct SyntheticShape {
  double frequency;   // w
  double smoothness;  // s
};

inline SyntheticShape synthetic_shape(SyntheticKind k) {
  switch (k) {
    case SyntheticKind::LF: return {2.0, 1.0};
    case SyntheticKind::HF: return {5.0, 1.0};
    case SyntheticKind::VF: return {5.0, 2.0};
  }
  return {2.0, 1.0};
}

/// Noise-free outputs (y1, y2) of the synthetic system at time t.
inline std::pair<double, double> synthetic_signal(SyntheticKind k, double t) {
  const auto [w, s] = synthetic_shape(k);
  const double c = std::cos(2.0 * std::numbers::pi * w * std::pow(t, s));
  return {5.0 * c, 5.0 * (1.0 - t) * c - 5.0 * t * c};
}

struct SyntheticSplit {
  Dataset train;
  Dataset test;
};

/// Train: n_per_dim times on (0, 0.8) observing only y1 and n_per_dim times on
/// (0.2, 1) observing only y2. Test: n_per_dim times on (0, 1) per output.
/// Times are uniform and sorted within each block; noise is iid N(0, noise_sd²).
inline SyntheticSplit generate_synthetic(SyntheticKind kind, std::size_t n_per_dim, double noise_sd,
                                         std::uint64_t seed) {
  if (n_per_dim < 1) throw ConfigError("generate_synthetic: n_per_dim must be at least 1");
  if (!(noise_sd >= 0.0)) throw ConfigError("generate_synthetic: noise_sd must be non-negative");
  std::mt19937_64 gen(seed);
  auto times = [&](double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> t(n_per_dim);
    for (double& x : t) x = u(gen);
    std::sort(t.begin(), t.end());
    return t;
  };
  const std::vector<double> train1 = times(0.0, 0.8);
  const std::vector<double> train2 = times(0.2, 1.0);
  const std::vector<double> test1 = times(0.0, 1.0);
  const std::vector<double> test2 = times(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto build = [&](const std::vector<double>& t1, const std::vector<double>& t2) {
    const std::size_t n = t1.size() + t2.size();
    Matrix x(n, 1);
    Matrix y(n, 2, std::numeric_limits<double>::quiet_NaN());
    std::vector<std::uint8_t> mask(n * 2, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const bool first = i < t1.size();
      const double t = first ? t1[i] : t2[i - t1.size()];
      const auto [y1, y2] = synthetic_signal(kind, t);
      const std::size_t d = first ? 0 : 1;
      x(i, 0) = t;
      y(i, d) = (first ? y1 : y2) + noise_sd * noise(gen);
      mask[i * 2 + d] = 1;
    }
    Dataset ds(std::move(x), std::move(y), std::move(mask));
    ds.input_names = {"t"};
    ds.output_names = {"y1", "y2"};
    return ds;
  };
  Dataset train = build(train1, train2);
  Dataset test = build(test1, test2);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

/// Splits one RFC-4180 record; `in` may span several physical lines when quoted.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line_no;
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      // tolerate CRLF
    } else if (c == '\n') {
      ++line_no;
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", line_no, fields.size() + 1);
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_cell(const std::string& raw, std::size_t row, std::size_t col) {
  const std::string s = trim(raw);
  if (s.empty() || s == "NaN" || s == "nan" || s == "NA") return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError("cannot parse '" + s + "' as a number", row, col);
  }
  if (used != s.size()) throw ParseError("trailing characters in '" + s + "'", row, col);
  return v;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

/// Shortest-safe decimal form: 17 significant digits round-trip any double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& input_cols,
                        const std::vector<std::string>& output_cols) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path.string());
  std::vector<std::string> header;
  std::size_t line = 1;
  if (!detail::read_csv_record(in, header, line)) throw ParseError("missing header row", 1, 1);
  for (auto& h : header) h = detail::trim(h);
  auto column_of = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("column '" + name + "' not found in header", 1, 1);
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> in_idx, out_idx;
  for (const auto& c : input_cols) in_idx.push_back(column_of(c));
  for (const auto& c : output_cols) out_idx.push_back(column_of(c));
  if (in_idx.empty() || out_idx.empty()) throw ConfigError("load_csv: need at least one input and one output column");

  std::vector<double> xs, ys;
  std::vector<std::uint8_t> mask;
  std::vector<std::string> fields;
  std::size_t rows = 0;
  while (true) {
    const std::size_t record_line = line;
    if (!detail::read_csv_record(in, fields, line)) break;
    if (fields.size() == 1 && detail::trim(fields[0]).empty()) continue;
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                       record_line, fields.size());
    for (std::size_t c : in_idx) {
      const auto v = detail::parse_cell(fields[c], record_line, c + 1);
      if (!v) throw ParseError("input cell is empty", record_line, c + 1);
      xs.push_back(*v);
    }
    for (std::size_t c : out_idx) {
      const auto v = detail::parse_cell(fields[c], record_line, c + 1);
      ys.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
      mask.push_back(v ? 1 : 0);
    }
    ++rows;
  }
  Dataset ds(Matrix(rows, in_idx.size(), std::move(xs)), Matrix(rows, out_idx.size(), std::move(ys)),
             std::move(mask));
  if (ds.observed_count() == 0) throw NoObservedEntries("load_csv: no observed output entries in " + path.string());
  ds.input_names = input_cols;
  ds.output_names = output_cols;
  return ds;
}

/// Writes inputs then outputs; unobserved entries are empty cells.
inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_csv: cannot write " + path.string());
  std::string line;
  for (std::size_t p = 0; p < ds.num_inputs(); ++p) line += (p ? "," : "") + detail::csv_quote(ds.input_names[p]);
  for (std::size_t d = 0; d < ds.num_outputs(); ++d) line += "," + detail::csv_quote(ds.output_names[d]);
  out << line << '\n';
  for (std::size_t n = 0; n < ds.num_rows(); ++n) {
    line.clear();
    for (std::size_t p = 0; p < ds.num_inputs(); ++p) line += (p ? "," : "") + format_double(ds.X()(n, p));
    for (std::size_t d = 0; d < ds.num_outputs(); ++d) {
      line += ',';
      if (ds.observed(n, d)) line += format_double(ds.y(n, d));
    }
    out << line << '\n';
  }
}

// ---------------------------------------------------------------------------
// Standardization and splitting

/// Sample mean and standard deviation (n − 1 denominator) of each output's observed entries.
inline std::vector<OutputScaling> output_moments(const Dataset& ds) {
  std::vector<OutputScaling> out(ds.num_outputs());
  for (std::size_t d = 0; d < ds.num_outputs(); ++d) {
    const std::size_t n_obs = ds.observed_count(d);
    if (n_obs < 2) throw DegenerateOutput("standardize: output " + ds.output_names[d] + " has fewer than 2 entries");
    double mean = 0.0;
    for (std::size_t n = 0; n < ds.num_rows(); ++n)
      if (ds.observed(n, d)) mean += ds.y(n, d);
    mean /= static_cast<double>(n_obs);
    double ss = 0.0;
    for (std::size_t n = 0; n < ds.num_rows(); ++n)
      if (ds.observed(n, d)) ss += (ds.y(n, d) - mean) * (ds.y(n, d) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n_obs - 1));
    if (!(sd > 0.0)) throw DegenerateOutput("standardize: output " + ds.output_names[d] + " has zero spread");
    out[d] = {mean, sd};
  }
  return out;
}

/// Applies (y − mean) / sd per output and composes the transform into ds.scaling.
inline Dataset standardize_with(const Dataset& ds, const std::vector<OutputScaling>& moments) {
  if (moments.size() != ds.num_outputs()) throw DimensionMismatch("standardize_with: one scaling per output needed");
  Matrix y = ds.Y();
  for (std::size_t n = 0; n < ds.num_rows(); ++n)
    for (std::size_t d = 0; d < ds.num_outputs(); ++d)
      if (ds.observed(n, d)) y(n, d) = (y(n, d) - moments[d].mean) / moments[d].sd;
  Dataset out = with_outputs(ds, std::move(y), ds.mask());
  for (std::size_t d = 0; d < ds.num_outputs(); ++d) {
    const OutputScaling prev = ds.scaling[d];
    out.scaling[d] = {prev.mean + prev.sd * moments[d].mean, prev.sd * moments[d].sd};
  }
  return out;
}

inline Dataset standardize(const Dataset& ds) { return standardize_with(ds, output_moments(ds)); }

/// Maps a standardized value of output d back to original units.
inline double destandardize(const Dataset& ds, std::size_t d, double v) {
  return v * ds.scaling[d].sd + ds.scaling[d].mean;
}

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Moves round(test_fraction · #candidates) observed entries, chosen by a
/// seeded shuffle, from the training mask into a test dataset over the same rows.
inline TrainTestSplit split(const Dataset& ds, double test_fraction, std::uint64_t seed,
                            std::optional<std::size_t> target_output = std::nullopt) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("split: test_fraction must lie in [0, 1]");
  if (target_output && *target_output >= ds.num_outputs()) throw ConfigError("split: target_output out of range");
  const std::size_t d_out = ds.num_outputs();
  std::vector<std::size_t> candidates;
  for (std::size_t n = 0; n < ds.num_rows(); ++n)
    for (std::size_t d = 0; d < d_out; ++d)
      if (ds.observed(n, d) && (!target_output || d == *target_output)) candidates.push_back(n * d_out + d);
  std::mt19937_64 gen(seed);
  std::shuffle(candidates.begin(), candidates.end(), gen);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(candidates.size())));
  std::vector<std::uint8_t> train_mask = ds.mask();
  std::vector<std::uint8_t> test_mask(train_mask.size(), 0);
  for (std::size_t k = 0; k < n_test; ++k) {
    train_mask[candidates[k]] = 0;
    test_mask[candidates[k]] = 1;
  }
  return {with_outputs(ds, ds.Y(), std::move(train_mask)), with_outputs(ds, ds.Y(), std::move(test_mask))};
}

}  // namespace cnmgp
