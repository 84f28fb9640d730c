#pragma once

// CSV ingestion and the JSON model document.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpr/error.hpp"
#include "cpr/fit.hpp"
#include "cpr/model.hpp"

namespace cpr {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kModelFormatVersion = 1;

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has none
  std::vector<std::vector<double>> rows;
  std::vector<int> lineNumbers;     // source line of each row
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  return r.ec == std::errc() && r.ptr == e;
}

}  // namespace detail

/// Numeric CSV. A first line that does not parse as numbers is a header.
/// Blank lines and lines starting with '#' are skipped; every row must have
/// the same field count.
inline CsvTable parse_csv(std::istream& in, const std::string& source = "csv") {
  CsvTable t;
  std::string line;
  int lineNo = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto fields = detail::split_fields(line);
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size() && numeric; ++i) numeric = detail::parse_double(fields[i], row[i]);
    if (!numeric && t.rows.empty() && t.header.empty()) {
      t.header = fields;
      width = fields.size();
      continue;
    }
    if (!numeric) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        double v;
        if (!detail::parse_double(fields[i], v))
          throw InvalidInput(source + ":" + std::to_string(lineNo) + ": field " + std::to_string(i + 1) +
                             " is not a number: '" + fields[i] + "'");
      }
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      throw InvalidInput(source + ":" + std::to_string(lineNo) + ": expected " + std::to_string(width) +
                         " fields, found " + std::to_string(fields.size()));
    for (std::size_t i = 0; i < row.size(); ++i)
      if (!std::isfinite(row[i]))
        throw InvalidInput(source + ":" + std::to_string(lineNo) + ": non-finite value in field " +
                           std::to_string(i + 1));
    t.rows.push_back(std::move(row));
    t.lineNumbers.push_back(lineNo);
  }
  if (t.rows.empty()) throw InvalidInput(source + ": no data rows");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  return parse_csv(in, path);
}

/// Label value in a file: +1/-1, or 1/0 mapped to +1/-1.
inline double parse_label(double v, const std::string& where) {
  if (v == 1.0) return 1.0;
  if (v == -1.0 || v == 0.0) return -1.0;
  throw InvalidInput(where + ": label must be one of 1, 0, -1");
}

struct CsvDatasetOptions {
  /// Label column: a header name or a 0-based index as text. Empty means the
  /// labels come from `labelPath`.
  std::string labelColumn;
  std::string labelPath;
  std::string sidePath;
  /// Prediction inputs may lack labels; they are then set to +1.
  bool labelsOptional = false;
};

/// Samples as rows, features as columns.
inline Dataset read_dataset(const std::string& path, const CsvDatasetOptions& opts) {
  const CsvTable t = read_csv_file(path);
  const std::size_t width = t.rows.front().size();
  std::optional<std::size_t> labelCol;
  if (!opts.labelColumn.empty()) {
    for (std::size_t i = 0; i < t.header.size(); ++i)
      if (t.header[i] == opts.labelColumn) labelCol = i;
    if (!labelCol) {
      double v;
      if (detail::parse_double(opts.labelColumn, v) && v >= 0 && v == std::floor(v) &&
          static_cast<std::size_t>(v) < width)
        labelCol = static_cast<std::size_t>(v);
    }
    if (!labelCol) throw InvalidInput(path + ": label column '" + opts.labelColumn + "' not found");
  }
  const Index n = static_cast<Index>(t.rows.size());
  const Index d = static_cast<Index>(width) - (labelCol ? 1 : 0);
  if (d < 1) throw InvalidInput(path + ": no feature columns");
  Dataset data;
  data.X.resize(d, n);
  data.y = VectorXd::Ones(n);
  for (Index j = 0; j < n; ++j) {
    const auto& row = t.rows[static_cast<std::size_t>(j)];
    Index f = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (labelCol && c == *labelCol) {
        data.y[j] = parse_label(row[c], path + ":" + std::to_string(t.lineNumbers[static_cast<std::size_t>(j)]));
      } else {
        data.X(f++, j) = row[c];
      }
    }
  }
  if (!t.header.empty())
    for (std::size_t c = 0; c < width; ++c)
      if (!labelCol || c != *labelCol) data.names.push_back(t.header[c]);

  if (!labelCol) {
    if (!opts.labelPath.empty()) {
      const CsvTable lt = read_csv_file(opts.labelPath);
      if (lt.rows.size() != t.rows.size())
        throw InvalidInput(opts.labelPath + ": " + std::to_string(lt.rows.size()) + " labels for " +
                           std::to_string(t.rows.size()) + " samples");
      for (std::size_t j = 0; j < lt.rows.size(); ++j) {
        if (lt.rows[j].size() != 1)
          throw InvalidInput(opts.labelPath + ":" + std::to_string(lt.lineNumbers[j]) + ": expected one column");
        data.y[static_cast<Index>(j)] =
            parse_label(lt.rows[j][0], opts.labelPath + ":" + std::to_string(lt.lineNumbers[j]));
      }
    } else if (!opts.labelsOptional) {
      throw InvalidInput(path + ": no label column given and no label file");
    }
  }

  if (!opts.sidePath.empty()) {
    const CsvTable st = read_csv_file(opts.sidePath);
    if (st.rows.size() != t.rows.size())
      throw InvalidInput(opts.sidePath + ": side information has " + std::to_string(st.rows.size()) +
                         " rows for " + std::to_string(t.rows.size()) + " samples");
    MatrixXd side(static_cast<Index>(st.rows.front().size()), n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < side.rows(); ++i) side(i, j) = st.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    data.side = std::move(side);
  }
  data.validate();
  return data;
}

/// Writes samples as rows with a header and the label in the last column.
inline void write_dataset_csv(std::ostream& os, const Dataset& data) {
  os.precision(17);
  for (Index i = 0; i < data.features(); ++i) {
    os << (static_cast<std::size_t>(i) < data.names.size() ? data.names[static_cast<std::size_t>(i)]
                                                            : "x" + std::to_string(i + 1))
       << ',';
  }
  os << "label\n";
  for (Index j = 0; j < data.samples(); ++j) {
    for (Index i = 0; i < data.features(); ++i) os << data.X(i, j) << ',';
    os << (data.y[j] > 0 ? 1 : -1) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Model document

namespace detail {

inline nlohmann::json to_json(const VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

inline KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "identity") return KernelKind::identity;
  if (s == "linear") return KernelKind::linear;
  if (s == "rbf-side") return KernelKind::rbf_side;
  if (s == "precomputed") return KernelKind::precomputed;
  throw InvalidInput("model: unknown kernel kind '" + s + "'");
}

}  // namespace detail

/// Precomputed kernels are stored by kind only; their matrix must be
/// supplied again before correlated prediction.
inline nlohmann::json model_to_json(const FittedModel& m) {
  using nlohmann::json;
  json kernels = json::array();
  for (std::size_t i = 0; i < m.covariance.components.size(); ++i) {
    const auto& c = m.covariance.components[i];
    json k = {{"kind", to_string(c.kind)}, {"lambda", m.covariance.lambdas[i]}};
    if (c.kind == KernelKind::rbf_side) k["lengthScale"] = c.lengthScale;
    kernels.push_back(k);
  }
  json doc = {
      {"format", "cpr-model"},
      {"formatVersion", kModelFormatVersion},
      {"toolVersion", kVersion},
      {"method", to_string(m.method)},
      {"penalty", m.penalty == Penalty::l1 ? "l1" : "l2"},
      {"seed", m.seed},
      {"lambda0", m.lambda0},
      {"covariance", {{"kernels", kernels}, {"jitterScale", m.covariance.jitterScale}}},
      {"standardization",
       {{"enabled", m.standardization.enabled},
        {"means", detail::to_json(m.standardization.means)},
        {"scales", detail::to_json(m.standardization.scales)}}},
      {"weights", detail::to_json(m.weights)},
      {"wPrime", m.wPrime ? detail::to_json(*m.wPrime) : json(nullptr)},
      {"objectiveTrace", m.objectiveTrace},
      {"diagnostics",
       {{"status", to_string(m.diagnostics.status)},
        {"iterations", m.diagnostics.iterations},
        {"primalResidual", m.diagnostics.primalResidual},
        {"dualResidual", m.diagnostics.dualResidual},
        {"epFailures", m.diagnostics.epFailures},
        {"seconds", m.diagnostics.seconds}}},
  };
  return doc;
}

inline FittedModel model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "cpr-model") throw InvalidInput("model: not a cpr model document");
    const int fv = doc.at("formatVersion").get<int>();
    if (fv != kModelFormatVersion) throw InvalidInput("model: unsupported format version " + std::to_string(fv));
    FittedModel m;
    m.method = method_from_string(doc.at("method").get<std::string>());
    m.penalty = doc.at("penalty").get<std::string>() == "l2" ? Penalty::l2 : Penalty::l1;
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.lambda0 = doc.at("lambda0").get<double>();
    for (const auto& k : doc.at("covariance").at("kernels")) {
      KernelComponent c;
      c.kind = detail::kernel_kind_from_string(k.at("kind").get<std::string>());
      if (c.kind == KernelKind::rbf_side) c.lengthScale = k.at("lengthScale").get<double>();
      m.covariance.components.push_back(c);
      m.covariance.lambdas.push_back(k.at("lambda").get<double>());
    }
    m.covariance.jitterScale = doc.at("covariance").at("jitterScale").get<double>();
    const auto& st = doc.at("standardization");
    m.standardization.enabled = st.at("enabled").get<bool>();
    m.standardization.means = detail::vector_from_json(st.at("means"));
    m.standardization.scales = detail::vector_from_json(st.at("scales"));
    m.weights = detail::vector_from_json(doc.at("weights"));
    if (!doc.at("wPrime").is_null()) m.wPrime = detail::vector_from_json(doc.at("wPrime"));
    m.objectiveTrace = doc.at("objectiveTrace").get<std::vector<double>>();
    const auto& dg = doc.at("diagnostics");
    const auto status = dg.at("status").get<std::string>();
    m.diagnostics.status = status == "converged"     ? FitStatus::converged
                           : status == "ep-failure" ? FitStatus::ep_failure
                                                    : FitStatus::not_converged;
    m.diagnostics.iterations = dg.at("iterations").get<int>();
    m.diagnostics.primalResidual = dg.at("primalResidual").get<double>();
    m.diagnostics.dualResidual = dg.at("dualResidual").get<double>();
    m.diagnostics.epFailures = dg.at("epFailures").get<int>();
    m.diagnostics.seconds = dg.at("seconds").get<double>();
    detail::require(m.standardization.means.size() == m.weights.size() &&
                        m.standardization.scales.size() == m.weights.size(),
                    "model: standardization size does not match weights");
    detail::require(!m.wPrime || m.wPrime->size() == m.weights.size(), "model: wPrime size mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("model: malformed document: ") + e.what());
  }
}

inline void save_model(const std::string& path, const FittedModel& m) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write '" + path + "'");
  out << model_to_json(m).dump(2) << '\n';
}

inline FittedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path + ": " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace cpr
