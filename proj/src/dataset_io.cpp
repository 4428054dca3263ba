#include "spatialvb/dataset_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "spatialvb/format.hpp"
#include "spatialvb/weights_io.hpp"

namespace spatialvb {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

bool is_na(const std::string& f) {
  return f.size() == 2 && std::toupper(static_cast<unsigned char>(f[0])) == 'N' &&
         std::toupper(static_cast<unsigned char>(f[1])) == 'A';
}

}  // namespace

CsvTable read_csv(std::istream& in, bool allow_na, const std::string& label) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw IoError(label + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(t.header.size()) + " fields, found " +
                    std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) {
      if (f.empty()) throw IoError(label + ":" + std::to_string(lineno) + ": empty field");
      if (is_na(f)) {
        if (!allow_na) throw IoError(label + ":" + std::to_string(lineno) + ": NA not allowed here");
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      try {
        row.push_back(parse_real(f));
      } catch (const IoError&) {
        throw IoError(label + ":" + std::to_string(lineno) + ": not a number: '" + f + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw IoError(label + ": empty file (a header row is required)");
  t.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      t.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  return t;
}

CsvTable read_csv(const std::filesystem::path& path, bool allow_na) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_csv(in, allow_na, path.string());
}

void write_csv(std::ostream& out, const std::vector<std::string>& header, const Matrix& values) {
  if (static_cast<Index>(header.size()) != values.cols()) {
    throw InvalidArgument("CSV header does not match the column count");
  }
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      if (j) out << ',';
      const double v = values(i, j);
      out << (std::isnan(v) ? std::string(kNaToken) : format_real(v));
    }
    out << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values) {
  std::ostringstream os;
  write_csv(os, header, values);
  write_text(path, os.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
}

SemData Dataset::sem_data() const {
  Vector yy = y;
  for (Index i : pattern.unobserved()) yy(i) = 0.0;
  return SemData{x, w, yy, pattern, x_star};
}

std::string Dataset::fingerprint() const {
  std::ostringstream os;
  write_csv(os, {"y"}, Matrix(y));
  write_csv(os, std::vector<std::string>(static_cast<std::size_t>(x.cols()), "x"), x);
  write_weights(os, w);
  if (x_star) write_csv(os, std::vector<std::string>(static_cast<std::size_t>(x_star->cols()), "s"), *x_star);
  return hex64(spatialvb::fingerprint(os.str()));
}

namespace {

std::vector<std::string> numbered(const std::string& prefix, Index count) {
  std::vector<std::string> out;
  for (Index j = 0; j < count; ++j) out.push_back(prefix + std::to_string(j));
  return out;
}

Json vec_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

Json truth_to_json(const Dataset& data) {
  Json j;
  j["mechanism"] = data.mechanism ? Json(to_string(*data.mechanism)) : Json(nullptr);
  if (data.truth) {
    j["beta"] = vec_json(data.truth->beta);
    j["sigma2_y"] = data.truth->sigma2_y;
    j["rho"] = data.truth->rho;
  }
  if (data.truth_psi) j["psi"] = vec_json(*data.truth_psi);
  j["n"] = data.x.rows();
  j["n_u"] = data.pattern.n_u();
  if (data.simulation) j["simulation"] = sim_config_to_json(*data.simulation);
  return j;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  ensure_directory(dir);
  write_csv(dir / "y.csv", {"y"}, Matrix(data.y));
  if (data.y_full) write_csv(dir / "y_full.csv", {"y"}, Matrix(*data.y_full));
  write_csv(dir / "X.csv", numbered("x", data.x.cols()), data.x);
  if (data.x_star) write_csv(dir / "Xstar.csv", numbered("xs", data.x_star->cols()), *data.x_star);
  write_weights(dir / "W.txt", data.w);
  Matrix pat(data.pattern.n(), 2);
  for (Index i = 0; i < data.pattern.n(); ++i) {
    pat(i, 0) = static_cast<double>(i);
    pat(i, 1) = data.pattern.missing(i) ? 1.0 : 0.0;
  }
  write_csv(dir / "pattern.csv", {"index", "m"}, pat);
  write_text(dir / "truth.json", truth_to_json(data).dump(2) + "\n");
}

namespace {

SpatialWeights normalized_weights(const SpatialWeights& raw) {
  const Vector sums = raw.matrix() * Vector::Ones(raw.n());
  bool unit_rows = true;
  for (Index i = 0; i < sums.size(); ++i) {
    if (std::abs(sums(i) - 1.0) > 1e-12) unit_rows = false;
  }
  if (unit_rows) {
    const auto e = raw.entries();
    return SpatialWeights::from_entries(raw.n(), e, true);
  }
  return row_normalize(raw);
}

}  // namespace

Dataset read_dataset(const DataPaths& paths, std::optional<Mechanism> mechanism) {
  const CsvTable yt = read_csv(paths.resolve(paths.y, "y.csv"), true);
  if (yt.values.cols() != 1) throw IoError("y.csv must have exactly one column");
  Vector y = yt.values.col(0);
  const Index n = y.size();
  std::vector<int> m(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) m[i] = std::isnan(y(i)) ? 1 : 0;
  MissingPattern pattern = MissingPattern::from_indicator(m);

  const CsvTable xt = read_csv(paths.resolve(paths.x, "X.csv"), false);
  if (xt.values.rows() != n) throw IoError("X.csv must have one row per unit of y.csv");
  SpatialWeights w = normalized_weights(read_weights(paths.resolve(paths.w, "W.txt"), n));
  if (w.n() != n) throw IoError("W has " + std::to_string(w.n()) + " units, y has " + std::to_string(n));

  std::optional<Json> truth;
  const auto truth_path = paths.resolve(paths.truth, "truth.json");
  if (std::filesystem::exists(truth_path)) {
    try {
      truth = Json::parse(read_text(truth_path));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("truth.json is not valid JSON: " + std::string(e.what()));
    }
  }
  if (!mechanism && truth && truth->contains("mechanism") && !(*truth)["mechanism"].is_null()) {
    mechanism = mechanism_from_string((*truth)["mechanism"].get<std::string>());
  }
  if (!mechanism) {
    throw UsageError("missing-data mechanism unknown: set \"mechanism\" in the config");
  }

  std::optional<Matrix> x_star;
  const auto xs_path = paths.resolve(paths.x_star, "Xstar.csv");
  if (*mechanism == Mechanism::kMnar) {
    if (!std::filesystem::exists(xs_path)) throw IoError("MNAR data needs " + xs_path.string());
    const CsvTable st = read_csv(xs_path, false);
    if (st.values.rows() != n) throw IoError("Xstar.csv must have one row per unit");
    x_star = st.values;
  }

  std::optional<Vector> y_full;
  const auto yf_path = paths.resolve(paths.y_full, "y_full.csv");
  if (std::filesystem::exists(yf_path)) {
    const CsvTable ft = read_csv(yf_path, false);
    if (ft.values.cols() != 1 || ft.values.rows() != n) {
      throw IoError("y_full.csv must be a single column with one row per unit");
    }
    y_full = ft.values.col(0);
  }

  Dataset d{std::move(y), xt.values, std::move(w), std::move(pattern), std::move(x_star),
            std::move(y_full), mechanism, std::nullopt, std::nullopt, std::nullopt};
  if (truth) {
    const Json& t = *truth;
    try {
      if (t.contains("beta") && t.contains("sigma2_y") && t.contains("rho")) {
        Vector beta(static_cast<Index>(t["beta"].size()));
        for (std::size_t i = 0; i < t["beta"].size(); ++i) beta(i) = t["beta"][i].get<double>();
        d.truth = SemParams{beta, t["sigma2_y"].get<double>(), t["rho"].get<double>()};
      }
      if (t.contains("psi")) {
        Vector psi(static_cast<Index>(t["psi"].size()));
        for (std::size_t i = 0; i < t["psi"].size(); ++i) psi(i) = t["psi"][i].get<double>();
        d.truth_psi = psi;
      }
      if (t.contains("simulation")) d.simulation = sim_config_from_json(t["simulation"]);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("truth.json has an unexpected layout: " + std::string(e.what()));
    }
  }
  return d;
}

}  // namespace spatialvb
