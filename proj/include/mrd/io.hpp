/*
 * Copyright 2026 The MRD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MRD_IO_HPP
#define MRD_IO_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mrd/model.hpp"

namespace mrd {

// ---------------------------------------------------------------------------
// Delimited text

namespace detail {

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) {
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

inline bool parse_double(const std::string &text, double &out) {
  const std::string t = trim(text);
  if (t.empty()) {
    return false;
  }
  char *end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size();
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

/// Reads a comma-separated numeric matrix. Blank lines are skipped.
inline Matrix load_csv(const std::string &path, bool header = false) {
  std::ifstream in(path);
  if (!in) {
    throw FileError("cannot open " + path);
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t line_no = 0;
  bool skipped_header = !header;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) {
      continue;
    }
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    const auto cells = detail::split(line, ',');
    std::vector<double> row;
    row.reserve(cells.size());
    for (size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v)) {
        throw ParseError(path + ":" + std::to_string(line_no) + ":" + std::to_string(c + 1) +
                         ": cannot parse '" + detail::trim(cells[c]) + "' as a number");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(rows.front().size()) +
                       " columns, found " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  const Index n = static_cast<Index>(rows.size());
  const Index p = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  Matrix M(n, p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) {
      M(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
  }
  return M;
}

/// Writes a matrix with round-trip precision.
inline void write_csv(const std::string &path, const Matrix &M, const std::vector<std::string> &header = {}) {
  std::ofstream out(path);
  if (!out) {
    throw FileError("cannot write " + path);
  }
  for (size_t j = 0; j < header.size(); ++j) {
    out << (j ? "," : "") << header[j];
  }
  if (!header.empty()) {
    out << '\n';
  }
  for (Index i = 0; i < M.rows(); ++i) {
    for (Index j = 0; j < M.cols(); ++j) {
      out << (j ? "," : "") << detail::format_double(M(i, j));
    }
    out << '\n';
  }
  if (!out) {
    throw FileError("error while writing " + path);
  }
}

inline void write_lines(const std::string &path, const std::vector<double> &values) {
  std::ofstream out(path);
  if (!out) {
    throw FileError("cannot write " + path);
  }
  for (double v : values) {
    out << detail::format_double(v) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Manifest

/// Key-value description of a dataset on disk. Lines:
///   view <name> <path>
///   timestamps <path | view:column>
///   sequences <path | view:column>
///   center <true|false>
///   header <true|false>
///   kernel <view> <family>
/// Relative paths resolve against the manifest's directory, '#' starts a
/// comment, and a `view:column` reference removes that column from the view.
struct DatasetManifest {
  std::vector<std::pair<std::string, std::string>> views; ///< name, path
  std::string timestamps;
  std::string sequences;
  bool center = true;
  bool header = false;
  std::map<std::string, KernelFamily> kernels;
  std::string base_dir;

  std::vector<KernelFamily> kernel_list(KernelFamily fallback = KernelFamily::eq_ard) const {
    std::vector<KernelFamily> out;
    for (const auto &[name, path] : views) {
      const auto it = kernels.find(name);
      out.push_back(it == kernels.end() ? fallback : it->second);
    }
    return out;
  }
};

namespace detail {

inline bool parse_bool(const std::string &s, const std::string &where) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") {
    return true;
  }
  if (s == "false" || s == "0" || s == "no" || s == "off") {
    return false;
  }
  throw ParseError(where + ": expected a boolean, got '" + s + "'");
}

inline std::string resolve(const std::string &base, const std::string &path) {
  const std::filesystem::path p(path);
  return p.is_absolute() || base.empty() ? path : (std::filesystem::path(base) / p).string();
}

} // namespace detail

inline DatasetManifest parse_manifest(const std::string &path) {
  std::ifstream in(path);
  if (!in) {
    throw FileError("cannot open manifest " + path);
  }
  DatasetManifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.erase(hash);
    }
    std::istringstream words(line);
    std::vector<std::string> tok;
    for (std::string w; words >> w;) {
      tok.push_back(w);
    }
    if (tok.empty()) {
      continue;
    }
    const std::string where = path + ":" + std::to_string(line_no);
    const auto need = [&](size_t count) {
      if (tok.size() != count) {
        throw ParseError(where + ": '" + tok[0] + "' takes " + std::to_string(count - 1) + " argument(s)");
      }
    };
    if (tok[0] == "view") {
      need(3);
      for (const auto &v : m.views) {
        if (v.first == tok[1]) {
          throw ParseError(where + ": duplicate view " + tok[1]);
        }
      }
      m.views.emplace_back(tok[1], tok[2]);
    } else if (tok[0] == "timestamps") {
      need(2);
      m.timestamps = tok[1];
    } else if (tok[0] == "sequences") {
      need(2);
      m.sequences = tok[1];
    } else if (tok[0] == "center") {
      need(2);
      m.center = detail::parse_bool(tok[1], where);
    } else if (tok[0] == "header") {
      need(2);
      m.header = detail::parse_bool(tok[1], where);
    } else if (tok[0] == "kernel") {
      need(3);
      try {
        m.kernels[tok[1]] = kernel_family_from_string(tok[2]);
      } catch (const InputError &e) {
        throw ParseError(where + ": " + e.what());
      }
    } else {
      throw ParseError(where + ": unknown key '" + tok[0] + "'");
    }
  }
  if (m.views.empty()) {
    throw ParseError(path + ": manifest declares no views");
  }
  for (const auto &[name, p] : m.kernels) {
    bool known = false;
    for (const auto &v : m.views) {
      known = known || v.first == name;
    }
    if (!known) {
      throw ParseError(path + ": kernel given for unknown view " + name);
    }
  }
  return m;
}

inline MultiViewDataset load_dataset(const DatasetManifest &m) {
  std::vector<Matrix> raw;
  std::vector<std::string> names;
  for (const auto &[name, p] : m.views) {
    raw.push_back(load_csv(detail::resolve(m.base_dir, p), m.header));
    names.push_back(name);
  }
  // Column references are pulled out of their view before centering.
  std::vector<std::pair<size_t, Index>> removed;
  const auto column_source = [&](const std::string &spec, const std::string &what) -> Vector {
    const auto colon = spec.rfind(':');
    if (colon != std::string::npos && colon > 0) {
      const std::string view = spec.substr(0, colon);
      for (size_t k = 0; k < names.size(); ++k) {
        if (names[k] == view) {
          double col = 0.0;
          if (!detail::parse_double(spec.substr(colon + 1), col) || col < 0 || col != std::floor(col) ||
              static_cast<Index>(col) >= raw[k].cols()) {
            throw ParseError("bad " + what + " column reference '" + spec + "'");
          }
          removed.emplace_back(k, static_cast<Index>(col));
          return raw[k].col(static_cast<Index>(col));
        }
      }
    }
    const Matrix M = load_csv(detail::resolve(m.base_dir, spec), m.header);
    if (M.cols() != 1) {
      throw ParseError(what + " file " + spec + " must have exactly one column");
    }
    return M.col(0);
  };
  std::optional<Vector> times;
  std::optional<std::vector<int>> seq;
  if (!m.timestamps.empty()) {
    times = column_source(m.timestamps, "timestamps");
  }
  if (!m.sequences.empty()) {
    const Vector s = column_source(m.sequences, "sequences");
    seq.emplace();
    for (Index i = 0; i < s.size(); ++i) {
      if (s(i) != std::floor(s(i))) {
        throw ParseError("sequence label on row " + std::to_string(i + 1) + " is not an integer");
      }
      seq->push_back(static_cast<int>(s(i)));
    }
  }
  std::sort(removed.begin(), removed.end(), [](const auto &a, const auto &b) { return a > b; });
  for (const auto &[k, col] : removed) {
    Matrix &M = raw[k];
    Matrix out(M.rows(), M.cols() - 1);
    out << M.leftCols(col), M.rightCols(M.cols() - col - 1);
    M = std::move(out);
  }
  // Check alignment with the file-level counts before centering.
  std::string counts;
  bool aligned = true;
  for (size_t k = 0; k < raw.size(); ++k) {
    counts += (k ? ", " : "") + names[k] + "=" + std::to_string(raw[k].rows());
    aligned = aligned && raw[k].rows() == raw.front().rows();
  }
  if (!aligned) {
    throw AlignmentError("views have different row counts: " + counts);
  }
  MultiViewDataset ds = MultiViewDataset::from_views(std::move(raw), std::move(names), m.center);
  ds.timestamps = times;
  ds.seq_ids = seq;
  ds.validate();
  return ds;
}

inline MultiViewDataset load_dataset(const std::string &manifest_path) {
  return load_dataset(parse_manifest(manifest_path));
}

// ---------------------------------------------------------------------------
// Toy data

struct ToyData {
  MultiViewDataset dataset;
  Vector times;
  Matrix signals; ///< n x 3: private sine (view y), private cosine (view z), shared squared cosine
  Matrix map_y;      ///< 1 x 10
  Matrix map_z;      ///< 1 x 10
  Matrix map_shared; ///< 1 x 5

  /// Noise-free rows of both views at new times, in the original units.
  std::pair<Matrix, Matrix> clean_rows(const Vector &t) const {
    const Vector s = t.array().sin();
    const Vector c = t.array().cos();
    const Vector c2 = c.array().square();
    Matrix Y(t.size(), 15);
    Matrix Z(t.size(), 15);
    Y << s * map_y, c2 * map_shared;
    Z << c * map_z, c2 * map_shared;
    return {Y, Z};
  }
};

/// Two 15-column views: each concatenates a 10-column random linear image of
/// its private signal with a shared 5-column image of cos^2, plus noise.
inline ToyData gen_toy(Index n, double noise_sd, std::uint64_t seed) {
  if (n < 10) {
    throw InputError("toy data needs n >= 10");
  }
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) {
    throw InputError("noise standard deviation must be finite and non-negative");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto draw = [&](Index r, Index c) {
    Matrix M(r, c);
    for (Index j = 0; j < c; ++j) {
      for (Index i = 0; i < r; ++i) {
        M(i, j) = normal(rng);
      }
    }
    return M;
  };
  ToyData toy;
  toy.times = Vector::LinSpaced(n, 0.0, 2.0 * M_PI);
  toy.signals.resize(n, 3);
  toy.signals.col(0) = toy.times.array().sin();
  toy.signals.col(1) = toy.times.array().cos();
  toy.signals.col(2) = toy.times.array().cos().square();
  toy.map_y = draw(1, 10);
  toy.map_z = draw(1, 10);
  toy.map_shared = draw(1, 5);
  auto [Y, Z] = toy.clean_rows(toy.times);
  Y += noise_sd * draw(n, 15);
  Z += noise_sd * draw(n, 15);
  toy.dataset = MultiViewDataset::from_views({Y, Z}, {"y", "z"});
  toy.dataset.timestamps = toy.times;
  return toy;
}

// ---------------------------------------------------------------------------
// Model files
//
// Layout (little-endian):
//   "MRDM" | u32 version | u32 record count | records...
// record:
//   u32 name length | name | u8 type (0 f64, 1 i64, 2 text) | u32 rank |
//   u64 dims[rank] | payload (column-major for matrices)

inline constexpr std::uint32_t kModelFileVersion = 1;

namespace detail {

class RecordWriter {
public:
  void f64(const std::string &name, const Matrix &M) {
    header(name, 0, {static_cast<std::uint64_t>(M.rows()), static_cast<std::uint64_t>(M.cols())});
    for (Index i = 0; i < M.size(); ++i) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, M.data() + i, 8);
      u64(bits);
    }
    ++count_;
  }
  void f64(const std::string &name, double v) { f64(name, Matrix::Constant(1, 1, v)); }
  void f64(const std::string &name, const std::vector<double> &v) {
    f64(name, Matrix(Eigen::Map<const Matrix>(v.data(), static_cast<Index>(v.size()), 1)));
  }
  void i64(const std::string &name, const std::vector<std::int64_t> &v) {
    header(name, 1, {static_cast<std::uint64_t>(v.size())});
    for (auto x : v) {
      u64(static_cast<std::uint64_t>(x));
    }
    ++count_;
  }
  void i64(const std::string &name, std::int64_t v) { i64(name, std::vector<std::int64_t>{v}); }
  void text(const std::string &name, const std::string &s) {
    header(name, 2, {static_cast<std::uint64_t>(s.size())});
    body_.insert(body_.end(), s.begin(), s.end());
    ++count_;
  }

  std::vector<std::uint8_t> finish() const {
    std::vector<std::uint8_t> out = {'M', 'R', 'D', 'M'};
    put32(out, kModelFileVersion);
    put32(out, count_);
    out.insert(out.end(), body_.begin(), body_.end());
    return out;
  }

private:
  static void put32(std::vector<std::uint8_t> &buf, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) {
      buf.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    }
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      body_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    }
  }
  void header(const std::string &name, std::uint8_t type, const std::vector<std::uint64_t> &dims) {
    put32(body_, static_cast<std::uint32_t>(name.size()));
    body_.insert(body_.end(), name.begin(), name.end());
    body_.push_back(type);
    put32(body_, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) {
      u64(d);
    }
  }

  std::vector<std::uint8_t> body_;
  std::uint32_t count_ = 0;
};

struct Record {
  std::uint8_t type = 0;
  std::vector<std::uint64_t> dims;
  Matrix f64;
  std::vector<std::int64_t> i64;
  std::string text;
};

class RecordReader {
public:
  RecordReader(std::vector<std::uint8_t> bytes, std::string path) : buf_(std::move(bytes)), path_(std::move(path)) {
    need(4, "magic");
    if (std::memcmp(buf_.data(), "MRDM", 4) != 0) {
      throw ParseError(path_ + ": not a model file (bad magic at offset 0)");
    }
    pos_ = 4;
    const std::uint32_t version = u32("version");
    if (version != kModelFileVersion) {
      throw ParseError(path_ + ": unsupported model file version " + std::to_string(version) + " (this build reads " +
                       std::to_string(kModelFileVersion) + ")");
    }
    const std::uint32_t count = u32("record count");
    for (std::uint32_t r = 0; r < count; ++r) {
      const size_t at = pos_;
      const std::uint32_t len = u32("record name length");
      need(len, "record name");
      std::string name(buf_.begin() + static_cast<long>(pos_), buf_.begin() + static_cast<long>(pos_ + len));
      pos_ += len;
      Record rec;
      need(1, "record type");
      rec.type = buf_[pos_++];
      const std::uint32_t rank = u32("record rank");
      if (rank > 2) {
        throw ParseError(path_ + ": record '" + name + "' at offset " + std::to_string(at) + " has rank " +
                         std::to_string(rank));
      }
      std::uint64_t total = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        rec.dims.push_back(u64("record dimension"));
        total *= rec.dims.back();
      }
      if (total > buf_.size()) {
        throw ParseError(path_ + ": record '" + name + "' at offset " + std::to_string(at) + " claims " +
                         std::to_string(total) + " elements");
      }
      if (rec.type == 0) {
        rec.f64.resize(static_cast<Index>(rec.dims.at(0)), rank > 1 ? static_cast<Index>(rec.dims[1]) : 1);
        for (Index i = 0; i < rec.f64.size(); ++i) {
          const std::uint64_t bits = u64("matrix data");
          std::memcpy(rec.f64.data() + i, &bits, 8);
        }
      } else if (rec.type == 1) {
        for (std::uint64_t i = 0; i < total; ++i) {
          rec.i64.push_back(static_cast<std::int64_t>(u64("integer data")));
        }
      } else if (rec.type == 2) {
        need(total, "text");
        rec.text.assign(buf_.begin() + static_cast<long>(pos_), buf_.begin() + static_cast<long>(pos_ + total));
        pos_ += total;
      } else {
        throw ParseError(path_ + ": record '" + name + "' at offset " + std::to_string(at) + " has unknown type " +
                         std::to_string(rec.type));
      }
      records_[name] = std::move(rec);
    }
    if (pos_ != buf_.size()) {
      throw ParseError(path_ + ": trailing bytes after offset " + std::to_string(pos_));
    }
  }

  bool has(const std::string &name) const { return records_.count(name) > 0; }

  const Record &get(const std::string &name, std::uint8_t type) const {
    const auto it = records_.find(name);
    if (it == records_.end()) {
      throw ParseError(path_ + ": missing record '" + name + "'");
    }
    if (it->second.type != type) {
      throw ParseError(path_ + ": record '" + name + "' has the wrong type");
    }
    return it->second;
  }
  const Matrix &matrix(const std::string &name) const { return get(name, 0).f64; }
  double scalar(const std::string &name) const {
    const Matrix &M = matrix(name);
    if (M.size() != 1) {
      throw ParseError(path_ + ": record '" + name + "' is not a scalar");
    }
    return M(0, 0);
  }
  const std::vector<std::int64_t> &ints(const std::string &name) const { return get(name, 1).i64; }
  std::int64_t integer(const std::string &name) const {
    const auto &v = ints(name);
    if (v.size() != 1) {
      throw ParseError(path_ + ": record '" + name + "' is not a scalar");
    }
    return v.front();
  }
  const std::string &text(const std::string &name) const { return get(name, 2).text; }

private:
  void need(std::uint64_t bytes, const char *what) const {
    if (pos_ + bytes > buf_.size()) {
      throw ParseError(path_ + ": truncated model file: " + what + " at offset " + std::to_string(pos_) + " needs " +
                       std::to_string(bytes) + " bytes, " + std::to_string(buf_.size() - pos_) + " remain");
    }
  }
  std::uint32_t u32(const char *what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) {
      v |= static_cast<std::uint32_t>(buf_[pos_ + static_cast<size_t>(b)]) << (8 * b);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char *what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) {
      v |= static_cast<std::uint64_t>(buf_[pos_ + static_cast<size_t>(b)]) << (8 * b);
    }
    pos_ += 8;
    return v;
  }

  std::vector<std::uint8_t> buf_;
  std::string path_;
  size_t pos_ = 0;
  std::map<std::string, Record> records_;
};

inline std::string view_key(size_t k, const char *field) { return "view" + std::to_string(k) + "." + field; }

} // namespace detail

inline std::vector<std::uint8_t> serialize_model(const MrdModel &model) {
  model.validate();
  detail::RecordWriter w;
  w.i64("q", model.q);
  w.i64("num_views", model.num_views());
  w.i64("tie_inducing", model.tie_inducing ? 1 : 0);
  w.i64("trained", model.trained ? 1 : 0);
  w.f64("bound_trace", model.bound_trace);
  w.text("termination", model.termination);
  for (size_t k = 0; k < model.views.size(); ++k) {
    const ViewModel &v = model.views[k];
    w.text(detail::view_key(k, "name"), model.view_names[k]);
    w.text(detail::view_key(k, "kernel"), to_string(v.kernel.family));
    w.f64(detail::view_key(k, "data"), v.data);
    w.f64(detail::view_key(k, "offset"), Matrix(model.offsets[k]));
    w.f64(detail::view_key(k, "inducing"), v.inducing);
    w.f64(detail::view_key(k, "kernel_variance"), v.kernel.variance);
    w.f64(detail::view_key(k, "weights"), Matrix(v.kernel.weights));
    w.f64(detail::view_key(k, "noise_precision"), v.noise_precision);
  }
  w.f64("posterior.means", posterior_means(model.posterior));
  if (const auto *c = std::get_if<CoupledLatentPosterior>(&model.posterior)) {
    w.text("prior", "temporal");
    w.f64("posterior.lambdas", c->lambdas);
    w.text("prior.kernel", to_string(model.prior.temporal_kernel.family));
    w.f64("prior.variance", model.prior.temporal_kernel.variance);
    w.f64("prior.lengthscale", model.prior.temporal_kernel.temporal_lengthscale);
    w.f64("prior.timestamps", Matrix(model.prior.timestamps));
    w.i64("prior.sequences", std::vector<std::int64_t>(model.prior.seq_ids.begin(), model.prior.seq_ids.end()));
  } else {
    w.text("prior", "standard_normal");
    w.f64("posterior.variances", std::get<DiagLatentPosterior>(model.posterior).variances);
  }
  return w.finish();
}

inline MrdModel deserialize_model(std::vector<std::uint8_t> bytes, const std::string &source = "<memory>") {
  const detail::RecordReader r(std::move(bytes), source);
  MrdModel m;
  try {
    m.q = r.integer("q");
    const auto K = static_cast<size_t>(r.integer("num_views"));
    m.tie_inducing = r.integer("tie_inducing") != 0;
    m.trained = r.integer("trained") != 0;
    const Matrix trace = r.matrix("bound_trace");
    m.bound_trace.assign(trace.data(), trace.data() + trace.size());
    m.termination = r.text("termination");
    for (size_t k = 0; k < K; ++k) {
      ViewModel v;
      m.view_names.push_back(r.text(detail::view_key(k, "name")));
      v.data = r.matrix(detail::view_key(k, "data"));
      m.offsets.push_back(r.matrix(detail::view_key(k, "offset")).col(0));
      v.inducing = r.matrix(detail::view_key(k, "inducing"));
      v.kernel.family = kernel_family_from_string(r.text(detail::view_key(k, "kernel")));
      v.kernel.variance = r.scalar(detail::view_key(k, "kernel_variance"));
      v.kernel.weights = r.matrix(detail::view_key(k, "weights")).col(0);
      v.noise_precision = r.scalar(detail::view_key(k, "noise_precision"));
      m.views.push_back(std::move(v));
    }
    const Matrix means = r.matrix("posterior.means");
    const std::string prior = r.text("prior");
    if (prior == "temporal") {
      const auto &seq = r.ints("prior.sequences");
      m.prior = LatentPrior::temporal(
          KernelSpec::temporal(kernel_family_from_string(r.text("prior.kernel")), r.scalar("prior.variance"),
                               r.scalar("prior.lengthscale")),
          r.matrix("prior.timestamps").col(0), std::vector<int>(seq.begin(), seq.end()));
      m.posterior = CoupledLatentPosterior{means, r.matrix("posterior.lambdas")};
    } else if (prior == "standard_normal") {
      m.posterior = DiagLatentPosterior{means, r.matrix("posterior.variances")};
    } else {
      throw ParseError(source + ": unknown prior '" + prior + "'");
    }
    m.validate();
  } catch (const InputError &e) {
    throw ParseError(source + ": inconsistent model: " + e.what());
  }
  return m;
}

/// Writes the model through a temporary file so a failed write never leaves
/// a partial file at `path`.
inline void save_model(const MrdModel &model, const std::string &path) {
  const std::vector<std::uint8_t> bytes = serialize_model(model);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      throw FileError("cannot write " + tmp);
    }
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw FileError("error while writing " + tmp);
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw FileError("cannot move " + tmp + " to " + path + ": " + ec.message());
  }
}

inline MrdModel load_model(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FileError("cannot open model file " + path);
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(std::move(bytes), path);
}

// ---------------------------------------------------------------------------
// Result artifacts

/// Normalized weights, one row per view, with a header naming the columns.
inline void write_weights_csv(const std::string &path, const Matrix &normalized,
                              const std::vector<std::string> &view_names) {
  std::ofstream out(path);
  if (!out) {
    throw FileError("cannot write " + path);
  }
  out << "view";
  for (Index j = 0; j < normalized.cols(); ++j) {
    out << ",dim" << j;
  }
  out << '\n';
  for (Index k = 0; k < normalized.rows(); ++k) {
    out << view_names.at(static_cast<size_t>(k));
    for (Index j = 0; j < normalized.cols(); ++j) {
      out << ',' << detail::format_double(normalized(k, j));
    }
    out << '\n';
  }
}

/// Views-by-dimensions heat-map. Row k is view k and column j is latent
/// dimension j, matching write_weights_csv.
inline std::string weights_svg(const Matrix &normalized, const std::vector<std::string> &view_names) {
  const int cell = 28;
  const int left = 110;
  const int top = 24;
  const auto rows = static_cast<int>(normalized.rows());
  const auto cols = static_cast<int>(normalized.cols());
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + cols * cell + 10 << "\" height=\""
    << top + rows * cell + 10 << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int j = 0; j < cols; ++j) {
    s << "  <text x=\"" << left + j * cell + cell / 2 << "\" y=\"" << top - 8 << "\" text-anchor=\"middle\">" << j
      << "</text>\n";
  }
  for (int k = 0; k < rows; ++k) {
    s << "  <text x=\"" << left - 6 << "\" y=\"" << top + k * cell + cell / 2 + 4 << "\" text-anchor=\"end\">"
      << view_names.at(static_cast<size_t>(k)) << "</text>\n";
    for (int j = 0; j < cols; ++j) {
      const double v = std::clamp(normalized(k, j), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      s << "  <rect class=\"cell\" data-view=\"" << k << "\" data-dim=\"" << j << "\" x=\"" << left + j * cell
        << "\" y=\"" << top + k * cell << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade
        << "," << shade << ",255)\" stroke=\"#888\"><title>" << detail::format_double(normalized(k, j))
        << "</title></rect>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

inline void write_weights_svg(const std::string &path, const Matrix &normalized,
                              const std::vector<std::string> &view_names) {
  std::ofstream out(path);
  if (!out) {
    throw FileError("cannot write " + path);
  }
  out << weights_svg(normalized, view_names);
}

} // namespace mrd

#endif
