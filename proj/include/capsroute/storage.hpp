#pragma once

// Binary container layout (all integers little-endian):
//
//   offset  size  field
//   0       8     magic "CAPSRT01"
//   8       4     record kind: 0 dataset, 1 master, 2 trace
//   12      4     n_lower
//   16      4     n_upper
//   20      4     dim (1 for master records)
//   24      8     record count
//   32      4     scalar width in bytes: 4 (f32) or 8 (f64)
//   36      4     metadata length L
//   40      L     metadata, UTF-8 JSON text
//   40+L          payload
//
// Payloads, per record:
//   dataset: label u32, then n_lower*n_upper*dim scalars in (i, j, k) order
//   master:  exactly one record of n_lower*n_upper scalars, row-major
//   trace:   label u32, predicted u32, iterations*n_lower*n_upper
//            coefficients, then n_upper*dim output scalars; the iteration
//            count lives in the metadata

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "capsroute/analysis.hpp"
#include "capsroute/dataset.hpp"
#include "capsroute/errors.hpp"
#include "capsroute/master.hpp"
#include "capsroute/routing.hpp"

namespace capsroute {

enum class RecordKind : std::uint32_t { Dataset = 0, Master = 1, Trace = 2 };
enum class ScalarWidth : std::uint32_t { F32 = 4, F64 = 8 };

inline constexpr std::array<char, 8> kMagic = {'C', 'A', 'P', 'S', 'R', 'T', '0', '1'};
inline constexpr std::size_t kHeaderSize = 40;

struct FileHeader {
  RecordKind kind = RecordKind::Dataset;
  std::uint32_t n_lower = 0;
  std::uint32_t n_upper = 0;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  ScalarWidth scalar_width = ScalarWidth::F64;
  std::string metadata;
};

// ---- JSON forms of the configs carried in metadata ------------------------

inline void to_json(nlohmann::json& j, const RoutingConfig& c) {
  j = nlohmann::json{{"iterations", c.iterations},
                     {"norm", to_string(c.norm_kind)},
                     {"p", c.lower_bound},
                     {"q", c.upper_bound},
                     {"epsilon", c.epsilon}};
  j["init_coefficient"] = c.init_coefficient ? nlohmann::json(*c.init_coefficient) : nlohmann::json();
}

inline void from_json(const nlohmann::json& j, RoutingConfig& c) {
  c.iterations = j.at("iterations").get<int>();
  c.norm_kind = parse_norm_kind(j.at("norm").get<std::string>());
  c.lower_bound = j.at("p").get<double>();
  c.upper_bound = j.at("q").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  const auto& init = j.at("init_coefficient");
  c.init_coefficient = init.is_null() ? std::nullopt : std::optional<double>(init.get<double>());
}

inline std::string to_string(const FilterSpec& f) {
  char buf[64];
  switch (f.kind) {
    case FilterSpec::Kind::None:
      return "none";
    case FilterSpec::Kind::Clustering:
      std::snprintf(buf, sizeof buf, "kmeans:%.17g", f.drop_fraction);
      return buf;
    case FilterSpec::Kind::Similarity:
      std::snprintf(buf, sizeof buf, "sim:%.17g", f.keep_fraction);
      return buf;
  }
  return "none";
}

inline void to_json(nlohmann::json& j, const FilterSpec& f) {
  j = nlohmann::json{{"kind", f.kind == FilterSpec::Kind::None         ? "none"
                              : f.kind == FilterSpec::Kind::Clustering ? "kmeans"
                                                                       : "sim"},
                     {"clusters", f.clusters},
                     {"drop_fraction", f.drop_fraction},
                     {"keep_fraction", f.keep_fraction},
                     {"seed", f.seed}};
}

inline void from_json(const nlohmann::json& j, FilterSpec& f) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "none") {
    f.kind = FilterSpec::Kind::None;
  } else if (kind == "kmeans") {
    f.kind = FilterSpec::Kind::Clustering;
  } else if (kind == "sim") {
    f.kind = FilterSpec::Kind::Similarity;
  } else {
    throw ValidationError("unknown filter kind '" + kind + "'");
  }
  f.clusters = j.at("clusters").get<std::size_t>();
  f.drop_fraction = j.at("drop_fraction").get<double>();
  f.keep_fraction = j.at("keep_fraction").get<double>();
  f.seed = j.at("seed").get<std::uint64_t>();
}

inline void to_json(nlohmann::json& j, const BuilderConfig& c) {
  j = nlohmann::json{{"norm", to_string(c.norm_kind)},
                     {"p", c.lower_bound},
                     {"q", c.upper_bound},
                     {"epsilon", c.epsilon},
                     {"filter", c.filter},
                     {"accumulation",
                      c.accumulation == Accumulation::FullMatrix ? "full" : "gt-only"}};
  j["extract_iteration"] =
      c.extract_iteration ? nlohmann::json(*c.extract_iteration) : nlohmann::json();
}

inline void from_json(const nlohmann::json& j, BuilderConfig& c) {
  c.norm_kind = parse_norm_kind(j.at("norm").get<std::string>());
  c.lower_bound = j.at("p").get<double>();
  c.upper_bound = j.at("q").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.filter = j.at("filter").get<FilterSpec>();
  c.accumulation = j.at("accumulation").get<std::string>() == "gt-only"
                       ? Accumulation::GroundTruthOnly
                       : Accumulation::FullMatrix;
  const auto& it = j.at("extract_iteration");
  c.extract_iteration = it.is_null() ? std::nullopt : std::optional<int>(it.get<int>());
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes_.push_back(static_cast<char>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) bytes_.push_back(static_cast<char>(v >> (8 * k)));
  }
  void raw(const void* data, std::size_t size) {
    const char* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + size);
  }
  void scalar(double v, ScalarWidth width) {
    if (width == ScalarWidth::F64) {
      u64(std::bit_cast<std::uint64_t>(v));
    } else {
      u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  void scalars(std::span<const double> values, ScalarWidth width) {
    for (double v : values) scalar(v, width);
  }

  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, pos_);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
    }
    pos_ += 8;
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  double scalar(ScalarWidth width) {
    const std::uint64_t at = pos_;
    const double v = width == ScalarWidth::F64
                         ? std::bit_cast<double>(u64("scalar"))
                         : static_cast<double>(std::bit_cast<float>(u32("scalar")));
    if (!std::isfinite(v)) throw FormatError("non-finite scalar", at);
    return v;
  }

  void scalars(std::span<double> out, ScalarWidth width) {
    for (double& v : out) v = scalar(width);
  }

 private:
  std::vector<char> bytes_;
  std::uint64_t pos_ = 0;
};

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  return bytes;
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw ValidationError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

inline void write_header(ByteWriter& w, const FileHeader& h) {
  w.raw(kMagic.data(), kMagic.size());
  w.u32(static_cast<std::uint32_t>(h.kind));
  w.u32(h.n_lower);
  w.u32(h.n_upper);
  w.u32(h.dim);
  w.u64(h.count);
  w.u32(static_cast<std::uint32_t>(h.scalar_width));
  w.u32(checked_u32(h.metadata.size(), "metadata length"));
  w.raw(h.metadata.data(), h.metadata.size());
}

/// Parses and validates the header; `record_bytes` gives the payload size of
/// one record so the total file length can be checked before any payload is
/// decoded.
template <typename RecordBytes>
FileHeader read_header(ByteReader& r, RecordKind expected, RecordBytes record_bytes) {
  const std::string magic = r.text(kMagic.size(), "magic");
  if (std::memcmp(magic.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("bad magic", 0);
  }
  FileHeader h;
  const std::uint64_t kind_at = r.offset();
  const std::uint32_t kind = r.u32("record kind");
  if (kind != static_cast<std::uint32_t>(expected)) {
    throw FormatError("unexpected record kind " + std::to_string(kind), kind_at);
  }
  h.kind = expected;
  const std::uint64_t dims_at = r.offset();
  h.n_lower = r.u32("n_lower");
  h.n_upper = r.u32("n_upper");
  h.dim = r.u32("dim");
  if (h.n_lower == 0 || h.n_upper == 0 || h.dim == 0) {
    throw FormatError("dimensions must all be >= 1", dims_at);
  }
  h.count = r.u64("count");
  const std::uint64_t width_at = r.offset();
  const std::uint32_t width = r.u32("scalar width");
  if (width != 4 && width != 8) {
    throw FormatError("scalar width must be 4 or 8, got " + std::to_string(width), width_at);
  }
  h.scalar_width = static_cast<ScalarWidth>(width);
  const std::uint32_t meta_len = r.u32("metadata length");
  h.metadata = r.text(meta_len, "metadata");
  if (!nlohmann::json::accept(h.metadata)) {
    throw FormatError("metadata is not valid JSON", kHeaderSize);
  }

  const long double per_record = static_cast<long double>(record_bytes(h));
  const long double expected_payload = per_record * static_cast<long double>(h.count);
  if (expected_payload != static_cast<long double>(r.remaining())) {
    throw FormatError("payload is " + std::to_string(r.remaining()) + " bytes, header declares " +
                          std::to_string(static_cast<unsigned long long>(expected_payload)),
                      r.offset());
  }
  return h;
}

inline nlohmann::json parse_metadata(const FileHeader& h) {
  return nlohmann::json::parse(h.metadata);
}

}  // namespace detail

// ---- datasets -------------------------------------------------------------

inline void write_dataset(const LabeledDataset& d, const std::string& path,
                          ScalarWidth width = ScalarWidth::F64) {
  d.validate();
  detail::ByteWriter w;
  detail::write_header(w, {RecordKind::Dataset, detail::checked_u32(d.n_lower, "n_lower"),
                           detail::checked_u32(d.n_upper, "n_upper"),
                           detail::checked_u32(d.dim, "dim"), d.examples.size(), width,
                           nlohmann::json{{"provenance", d.provenance}}.dump()});
  for (const auto& e : d.examples) {
    w.u32(e.label);
    w.scalars(e.predictions.data(), width);
  }
  detail::write_file(path, w.bytes());
}

inline LabeledDataset read_dataset(const std::string& path) {
  detail::ByteReader r(detail::read_file(path));
  const FileHeader h = detail::read_header(r, RecordKind::Dataset, [](const FileHeader& hh) {
    return 4.0L + static_cast<long double>(hh.n_lower) * hh.n_upper * hh.dim *
                      static_cast<std::uint32_t>(hh.scalar_width);
  });
  LabeledDataset d;
  d.n_lower = h.n_lower;
  d.n_upper = h.n_upper;
  d.dim = h.dim;
  const auto meta = detail::parse_metadata(h);
  if (meta.contains("provenance") && meta["provenance"].is_string()) {
    d.provenance = meta["provenance"].get<std::string>();
  }
  d.examples.reserve(h.count);
  const std::size_t values = d.n_lower * d.n_upper * d.dim;
  for (std::uint64_t n = 0; n < h.count; ++n) {
    const std::uint64_t at = r.offset();
    const std::uint32_t label = r.u32("label");
    if (label >= h.n_upper) {
      throw FormatError("label " + std::to_string(label) + " out of range", at);
    }
    std::vector<double> data(values);
    r.scalars(data, h.scalar_width);
    d.examples.push_back({PredictionTensor(d.n_lower, d.n_upper, d.dim, std::move(data)), label});
  }
  return d;
}

// ---- master matrices ------------------------------------------------------

inline void write_master(const MasterMatrix& m, const std::string& path,
                         ScalarWidth width = ScalarWidth::F64) {
  nlohmann::json meta{{"build_config", m.build_config},
                      {"routing_config", m.routing_config},
                      {"class_counts", m.class_counts},
                      {"source_digest", to_hex(m.source_digest)}};
  detail::ByteWriter w;
  detail::write_header(w, {RecordKind::Master, detail::checked_u32(m.values.rows(), "n_lower"),
                           detail::checked_u32(m.values.cols(), "n_upper"), 1, 1, width,
                           meta.dump()});
  w.scalars(m.values.data(), width);
  detail::write_file(path, w.bytes());
}

inline Digest parse_hex_digest(const std::string& hex, std::uint64_t offset) {
  if (hex.size() != 64) throw FormatError("source digest must be 64 hex characters", offset);
  Digest d{};
  for (std::size_t k = 0; k < 32; ++k) {
    unsigned v = 0;
    if (std::sscanf(hex.c_str() + 2 * k, "%2x", &v) != 1) {
      throw FormatError("source digest is not hex", offset);
    }
    d[k] = static_cast<std::uint8_t>(v);
  }
  return d;
}

inline MasterMatrix read_master(const std::string& path) {
  detail::ByteReader r(detail::read_file(path));
  const FileHeader h = detail::read_header(r, RecordKind::Master, [](const FileHeader& hh) {
    return static_cast<long double>(hh.n_lower) * hh.n_upper *
           static_cast<std::uint32_t>(hh.scalar_width);
  });
  if (h.count != 1) throw FormatError("master file must hold exactly one record", 24);
  MasterMatrix m;
  try {
    const auto meta = detail::parse_metadata(h);
    m.build_config = meta.at("build_config").get<BuilderConfig>();
    m.routing_config = meta.at("routing_config").get<RoutingConfig>();
    m.class_counts = meta.at("class_counts").get<std::vector<std::uint64_t>>();
    m.source_digest = parse_hex_digest(meta.at("source_digest").get<std::string>(), kHeaderSize);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("master metadata: ") + e.what(), kHeaderSize);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("master metadata: ") + e.what(), kHeaderSize);
  }
  std::vector<double> values(static_cast<std::size_t>(h.n_lower) * h.n_upper);
  r.scalars(values, h.scalar_width);
  m.values = Matrix(h.n_lower, h.n_upper, std::move(values));
  return m;
}

// ---- routing traces -------------------------------------------------------

struct TraceRecord {
  std::uint32_t label = 0;
  std::uint32_t predicted = 0;
  RoutingTrace trace;
};

/// Routing results for a dataset. Fast-mode files carry zero iterations.
struct TraceFile {
  std::size_t n_lower = 0;
  std::size_t n_upper = 0;
  std::size_t dim = 0;
  std::size_t iterations = 0;
  CoefficientKind coefficient_kind = CoefficientKind::MaxMinNormalized;
  std::string metadata = "{}";
  std::vector<TraceRecord> records;
};

inline void write_trace(const TraceFile& t, const std::string& path,
                        ScalarWidth width = ScalarWidth::F64) {
  nlohmann::json meta = nlohmann::json::parse(t.metadata);
  meta["iterations"] = t.iterations;
  meta["coefficient_kind"] =
      t.coefficient_kind == CoefficientKind::SoftmaxNormalized ? "softmax" : "maxmin";
  detail::ByteWriter w;
  detail::write_header(w, {RecordKind::Trace, detail::checked_u32(t.n_lower, "n_lower"),
                           detail::checked_u32(t.n_upper, "n_upper"),
                           detail::checked_u32(t.dim, "dim"), t.records.size(), width,
                           meta.dump()});
  for (const auto& rec : t.records) {
    if (rec.trace.iterations() != t.iterations) {
      throw DimensionError("trace record iteration count differs from file");
    }
    w.u32(rec.label);
    w.u32(rec.predicted);
    for (const auto& c : rec.trace.per_iteration_coefficients) {
      if (c.values.rows() != t.n_lower || c.values.cols() != t.n_upper) {
        throw DimensionError("trace coefficients do not match file dims");
      }
      w.scalars(c.values.data(), width);
    }
    if (rec.trace.final_outputs.n_upper() != t.n_upper || rec.trace.final_outputs.dim() != t.dim) {
      throw DimensionError("trace outputs do not match file dims");
    }
    w.scalars(rec.trace.final_outputs.values.data(), width);
  }
  detail::write_file(path, w.bytes());
}

inline TraceFile read_trace(const std::string& path) {
  detail::ByteReader r(detail::read_file(path));
  // The iteration count is in the metadata, which read_header has not parsed
  // yet when it sizes the payload; peek at it first.
  std::size_t iterations = 0;
  const FileHeader h = detail::read_header(r, RecordKind::Trace, [&](const FileHeader& hh) {
    const auto meta = nlohmann::json::parse(hh.metadata);
    if (!meta.contains("iterations") || !meta["iterations"].is_number_unsigned()) {
      throw FormatError("trace metadata lacks an iteration count", kHeaderSize);
    }
    iterations = meta["iterations"].get<std::size_t>();
    const long double width = static_cast<std::uint32_t>(hh.scalar_width);
    return 8.0L + (static_cast<long double>(iterations) * hh.n_lower * hh.n_upper +
                   static_cast<long double>(hh.n_upper) * hh.dim) *
                      width;
  });
  TraceFile t;
  t.n_lower = h.n_lower;
  t.n_upper = h.n_upper;
  t.dim = h.dim;
  t.iterations = iterations;
  auto meta = detail::parse_metadata(h);
  t.coefficient_kind = meta.value("coefficient_kind", "maxmin") == "softmax"
                           ? CoefficientKind::SoftmaxNormalized
                           : CoefficientKind::MaxMinNormalized;
  meta.erase("iterations");
  meta.erase("coefficient_kind");
  t.metadata = meta.dump();
  t.records.reserve(h.count);
  for (std::uint64_t n = 0; n < h.count; ++n) {
    TraceRecord rec;
    rec.label = r.u32("label");
    rec.predicted = r.u32("prediction");
    for (std::size_t it = 0; it < iterations; ++it) {
      CoefficientMatrix c{Matrix(t.n_lower, t.n_upper), t.coefficient_kind};
      r.scalars(c.values.data(), h.scalar_width);
      rec.trace.per_iteration_coefficients.push_back(std::move(c));
    }
    rec.trace.final_outputs.values = Matrix(t.n_upper, t.dim);
    r.scalars(rec.trace.final_outputs.values.data(), h.scalar_width);
    t.records.push_back(std::move(rec));
  }
  return t;
}

// ---- CSV ------------------------------------------------------------------

/// 9 significant digits, trailing zeros kept ("1.00000000").
inline std::string format_csv_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%#.9g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  static CsvTable from_matrix(const Matrix& m, std::vector<std::string> header) {
    CsvTable t{std::move(header), {}};
    for (std::size_t r = 0; r < m.rows(); ++r) {
      std::vector<std::string> row;
      for (double v : m.row(r)) row.push_back(format_csv_value(v));
      t.rows.push_back(std::move(row));
    }
    return t;
  }
};

inline void write_csv(const CsvTable& table, const std::string& path) {
  std::string text;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) text.push_back(',');
      text += cells[k];
    }
    text.push_back('\n');
  };
  line(table.header);
  for (const auto& row : table.rows) line(row);
  detail::write_file(path, std::vector<char>(text.begin(), text.end()));
}

inline void export_csv(const CorrelationMatrix& m, const std::string& path) {
  write_csv(CsvTable::from_matrix(m.values, m.col_labels), path);
}

inline void export_csv(const TuningCurves& curves, const std::string& path) {
  write_csv(CsvTable::from_matrix(curves.values,
                                  detail::indexed_labels("capsule", curves.values.cols())),
            path);
}

/// One row: overall accuracy, then per-class recall.
inline void export_csv(const AccuracyReport& report, const std::string& path) {
  CsvTable t;
  t.header.push_back("overall");
  std::vector<std::string> row{format_csv_value(report.overall)};
  for (std::size_t k = 0; k < report.per_class_recall.size(); ++k) {
    t.header.push_back("recall_class" + std::to_string(k));
    row.push_back(format_csv_value(report.per_class_recall[k]));
  }
  t.rows.push_back(std::move(row));
  write_csv(t, path);
}

}  // namespace capsroute
