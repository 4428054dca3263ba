#pragma once

// Dataset files: delimited numeric tables with an NA token, the simulated
// dataset layout, and reading it back.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spatialvb/posterior.hpp"
#include "spatialvb/run_config.hpp"

namespace spatialvb {

inline constexpr const char* kNaToken = "NA";

// Numeric CSV with a header row. NA (any case) becomes NaN when allowed;
// empty fields are always rejected.
struct CsvTable {
  std::vector<std::string> header;
  Matrix values;
};

CsvTable read_csv(std::istream& in, bool allow_na, const std::string& label = "csv");
CsvTable read_csv(const std::filesystem::path& path, bool allow_na);
// NaN entries are written as NA; reals use the shortest round-trip form.
void write_csv(std::ostream& out, const std::vector<std::string>& header, const Matrix& values);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
void ensure_directory(const std::filesystem::path& dir);

struct Dataset {
  Vector y;  // NaN at missing positions
  Matrix x;
  SpatialWeights w;  // row-normalized
  MissingPattern pattern;
  std::optional<Matrix> x_star;
  std::optional<Vector> y_full;
  std::optional<Mechanism> mechanism;
  std::optional<SemParams> truth;
  std::optional<Vector> truth_psi;  // (psi_x..., psi_y)
  std::optional<SimConfig> simulation;

  SemData sem_data() const;
  // Hash of the observed data (y with NA, X, W, X*), for matching fits.
  std::string fingerprint() const;
};

// y.csv, y_full.csv, X.csv, Xstar.csv (MNAR), W.txt, pattern.csv, truth.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
// Missing positions come from NA entries of y. W is row-normalized on read
// unless its rows already sum to one.
Dataset read_dataset(const DataPaths& paths, std::optional<Mechanism> mechanism);

Json truth_to_json(const Dataset& data);

}  // namespace spatialvb
