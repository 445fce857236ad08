#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "wedl/matrix.hpp"
#include "wedl/rng.hpp"

namespace wedl {

struct FeatureRecord {
  std::vector<double> features;
  long label = 0;  // raw label as found in the source; may be non-contiguous
};

// A feature dataset with contiguous labels in [0, class_count).
struct FeatureDataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // length n
  int class_count = 0;

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }

  FeatureRecord record(std::size_t i) const {
    auto r = features.row(i);
    return {std::vector<double>(r.begin(), r.end()), labels[i]};
  }

  std::vector<std::vector<int>> indices_by_class() const {
    std::vector<std::vector<int>> by_class(class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(int(i));
    return by_class;
  }

  // Remaps raw labels to [0, C) in first-appearance order and checks the
  // shared-dimension and finiteness invariants.
  static FeatureDataset from_records(const std::vector<FeatureRecord>& records) {
    if (records.empty()) throw std::runtime_error("dataset: no records");
    const std::size_t d = records[0].features.size();
    if (d == 0) throw std::runtime_error("dataset: zero-dimensional features");
    FeatureDataset ds;
    ds.features = Matrix(records.size(), d);
    ds.labels.resize(records.size());
    std::map<long, int> remap;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const FeatureRecord& r = records[i];
      if (r.features.size() != d)
        throw std::runtime_error("dataset: inconsistent dimension at record " +
                                 std::to_string(i + 1));
      if (r.label < 0)
        throw std::runtime_error("dataset: negative label at record " + std::to_string(i + 1));
      for (std::size_t j = 0; j < d; ++j) {
        if (!std::isfinite(r.features[j]))
          throw std::runtime_error("dataset: non-finite value at record " + std::to_string(i + 1));
        ds.features(i, j) = r.features[j];
      }
      auto it = remap.find(r.label);
      if (it == remap.end()) it = remap.emplace(r.label, int(remap.size())).first;
      ds.labels[i] = it->second;
    }
    ds.class_count = int(remap.size());
    return ds;
  }
};

enum class FileFormat { csv, bin };

inline FileFormat parse_format(const std::string& s) {
  if (s == "csv") return FileFormat::csv;
  if (s == "bin") return FileFormat::bin;
  throw std::invalid_argument("unknown dataset format '" + s + "' (expected csv or bin)");
}

namespace detail {

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline std::uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("dataset: truncated binary file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("dataset: truncated binary file");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
  return u;
}

inline void write_f64_le(std::ostream& os, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((u >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline double read_f64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("dataset: truncated binary file");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  while (p < e && (*p == ' ' || *p == '\t')) ++p;
  return ec == std::errc{} && p == e;
}

inline bool parse_long(const std::string& s, long& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  while (p < e && (*p == ' ' || *p == '\t')) ++p;
  return ec == std::errc{} && p == e;
}

}  // namespace detail

// Text format: header "f0,...,f{d-1},label", one record per line.
// Binary format: magic "FSTO", little-endian u32 n, u32 d, n*d f64 features,
// then n u32 labels.
inline FeatureDataset load_features(const std::string& path, FileFormat format) {
  if (format == FileFormat::bin) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("dataset: cannot open '" + path + "'");
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "FSTO")
      throw std::runtime_error("dataset: bad magic in '" + path + "'");
    const std::uint32_t n = detail::read_u32_le(is);
    const std::uint32_t d = detail::read_u32_le(is);
    if (n == 0) throw std::runtime_error("dataset: empty file '" + path + "'");
    if (d == 0) throw std::runtime_error("dataset: zero-dimensional features in '" + path + "'");
    std::vector<FeatureRecord> records(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      records[i].features.resize(d);
      for (std::uint32_t j = 0; j < d; ++j) records[i].features[j] = detail::read_f64_le(is);
    }
    for (std::uint32_t i = 0; i < n; ++i) records[i].label = long(detail::read_u32_le(is));
    return FeatureDataset::from_records(records);
  }

  std::ifstream is(path);
  if (!is) throw std::runtime_error("dataset: cannot open '" + path + "'");
  std::vector<FeatureRecord> records;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto fields = detail::split_csv_line(line);
    if (line_no == 1 && !fields.empty() && !fields[0].empty() &&
        !(std::isdigit(static_cast<unsigned char>(fields[0][0])) || fields[0][0] == '-' ||
          fields[0][0] == '+' || fields[0][0] == '.'))
      continue;  // header row
    if (fields.size() < 2)
      throw std::runtime_error("dataset: malformed row " + std::to_string(line_no) + " in '" +
                               path + "'");
    FeatureRecord rec;
    rec.features.resize(fields.size() - 1);
    for (std::size_t j = 0; j + 1 < fields.size(); ++j) {
      if (!detail::parse_double(fields[j], rec.features[j]))
        throw std::runtime_error("dataset: malformed row " + std::to_string(line_no) + " in '" +
                                 path + "'");
      if (!std::isfinite(rec.features[j]))
        throw std::runtime_error("dataset: non-finite value at row " + std::to_string(line_no) +
                                 " in '" + path + "'");
    }
    if (!detail::parse_long(fields.back(), rec.label) || rec.label < 0)
      throw std::runtime_error("dataset: malformed row " + std::to_string(line_no) + " in '" +
                               path + "'");
    if (dim == 0)
      dim = rec.features.size();
    else if (rec.features.size() != dim)
      throw std::runtime_error("dataset: inconsistent dimension at row " +
                               std::to_string(line_no) + " in '" + path + "'");
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw std::runtime_error("dataset: empty file '" + path + "'");
  return FeatureDataset::from_records(records);
}

inline void save_features(const FeatureDataset& ds, const std::string& path, FileFormat format) {
  if (format == FileFormat::bin) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("dataset: cannot write '" + path + "'");
    os.write("FSTO", 4);
    detail::write_u32_le(os, std::uint32_t(ds.size()));
    detail::write_u32_le(os, std::uint32_t(ds.dim()));
    for (std::size_t i = 0; i < ds.size(); ++i)
      for (std::size_t j = 0; j < ds.dim(); ++j) detail::write_f64_le(os, ds.features(i, j));
    for (std::size_t i = 0; i < ds.size(); ++i)
      detail::write_u32_le(os, std::uint32_t(ds.labels[i]));
    if (!os) throw std::runtime_error("dataset: write failed for '" + path + "'");
    return;
  }

  std::ofstream os(path);
  if (!os) throw std::runtime_error("dataset: cannot write '" + path + "'");
  for (std::size_t j = 0; j < ds.dim(); ++j) os << 'f' << j << ',';
  os << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.features(i, j));
      os << buf << ',';
    }
    os << ds.labels[i] << '\n';
  }
  if (!os) throw std::runtime_error("dataset: write failed for '" + path + "'");
}

struct ZslSplit {
  FeatureDataset train;
  FeatureDataset test;
};

// Disjoint-class split: train gets classes [0, ceil(C/2)), test the rest.
// Both halves are re-indexed to contiguous labels starting at 0 (order
// preserving, so the split is reproducible across formats).
inline ZslSplit zsl_split(const FeatureDataset& ds) {
  if (ds.class_count < 2) throw std::runtime_error("zsl_split: need at least 2 classes");
  const int train_classes = (ds.class_count + 1) / 2;
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (ds.labels[i] < train_classes ? train_idx : test_idx).push_back(i);

  auto take = [&](const std::vector<std::size_t>& idx, int label_offset, int classes) {
    FeatureDataset out;
    out.features = Matrix(idx.size(), ds.dim());
    out.labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < ds.dim(); ++j) out.features(r, j) = ds.features(idx[r], j);
      out.labels[r] = ds.labels[idx[r]] - label_offset;
    }
    out.class_count = classes;
    return out;
  };
  ZslSplit split;
  split.train = take(train_idx, 0, train_classes);
  split.test = take(test_idx, train_classes, ds.class_count - train_classes);
  return split;
}

struct MiniBatch {
  std::vector<int> indices;  // into the source dataset
  Matrix features;           // N x d
  std::vector<int> labels;   // length N
};

// Class-balanced sampler: P distinct classes without replacement, K samples
// per class (without replacement when the class has >= K samples, with
// replacement otherwise). Deterministic given the rng state.
inline MiniBatch sample_batch(const FeatureDataset& ds, int P, int K, Rng& rng) {
  if (P < 2 || K < 2) throw std::invalid_argument("sample_batch: require P >= 2 and K >= 2");
  if (ds.class_count < P)
    throw std::runtime_error("sample_batch: dataset has " + std::to_string(ds.class_count) +
                             " classes, need " + std::to_string(P));
  const auto by_class = ds.indices_by_class();

  std::vector<int> class_ids(ds.class_count);
  for (int c = 0; c < ds.class_count; ++c) class_ids[c] = c;
  for (int i = 0; i < P; ++i)
    std::swap(class_ids[i], class_ids[i + int(rng.uniform(std::uint64_t(ds.class_count - i)))]);
  class_ids.resize(P);

  MiniBatch batch;
  batch.indices.reserve(std::size_t(P) * K);
  for (int c : class_ids) {
    const auto& pool = by_class[c];
    if (int(pool.size()) >= K) {
      std::vector<int> local(pool);
      for (int i = 0; i < K; ++i) {
        std::swap(local[i], local[i + int(rng.uniform(std::uint64_t(local.size() - i)))]);
        batch.indices.push_back(local[i]);
      }
    } else {
      for (int i = 0; i < K; ++i)
        batch.indices.push_back(pool[rng.uniform(pool.size())]);
    }
  }
  batch.features = Matrix(batch.indices.size(), ds.dim());
  batch.labels.resize(batch.indices.size());
  for (std::size_t r = 0; r < batch.indices.size(); ++r) {
    for (std::size_t j = 0; j < ds.dim(); ++j)
      batch.features(r, j) = ds.features(batch.indices[r], j);
    batch.labels[r] = ds.labels[batch.indices[r]];
  }
  return batch;
}

enum class Warp { none, tanh_mix };

inline Warp parse_warp(const std::string& s) {
  if (s == "none") return Warp::none;
  if (s == "tanh-mix") return Warp::tanh_mix;
  throw std::invalid_argument("unknown warp '" + s + "' (expected none or tanh-mix)");
}

// Synthetic clusters: class means uniform on a sphere of radius sep, unit
// isotropic noise. The tanh-mix warp applies a fixed x + tanh(Wx) map to all
// samples so a linear head cannot trivially separate the classes.
inline FeatureDataset synth_gaussians(int classes, int per_class, int d, double sep, Warp warp,
                                      Rng& rng) {
  if (classes < 2) throw std::invalid_argument("synth_gaussians: classes must be >= 2");
  if (per_class < 2) throw std::invalid_argument("synth_gaussians: per_class must be >= 2");
  if (d < 1) throw std::invalid_argument("synth_gaussians: d must be >= 1");
  if (sep < 0.0) throw std::invalid_argument("synth_gaussians: sep must be >= 0");

  Matrix warp_w;
  if (warp == Warp::tanh_mix) {
    warp_w = Matrix(d, d);
    const double scale = 1.0 / std::sqrt(double(d));
    for (auto& x : warp_w.data) x = rng.normal() * scale;
  }

  Matrix means(classes, d);
  for (int c = 0; c < classes; ++c) {
    double ss = 0.0;
    for (int j = 0; j < d; ++j) {
      means(c, j) = rng.normal();
      ss += means(c, j) * means(c, j);
    }
    const double denom = std::max(std::sqrt(ss), 1e-12);
    for (int j = 0; j < d; ++j) means(c, j) *= sep / denom;
  }

  FeatureDataset ds;
  ds.features = Matrix(std::size_t(classes) * per_class, d);
  ds.labels.resize(std::size_t(classes) * per_class);
  ds.class_count = classes;
  std::vector<double> z(d);
  std::size_t row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      for (int j = 0; j < d; ++j) z[j] = means(c, j) + rng.normal();
      if (warp == Warp::tanh_mix) {
        for (int j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int k = 0; k < d; ++k) acc += warp_w(j, k) * z[k];
          ds.features(row, j) = z[j] + std::tanh(acc);
        }
      } else {
        for (int j = 0; j < d; ++j) ds.features(row, j) = z[j];
      }
      ds.labels[row] = c;
    }
  }
  return ds;
}

}  // namespace wedl
