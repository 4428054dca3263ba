#include "spatialvb/weights_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spatialvb/format.hpp"

namespace spatialvb {

namespace {

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

SpatialWeights read_weights(std::istream& in, std::optional<Index> n_hint) {
  std::string line;
  bool matrix_market = false;
  bool size_seen = false;
  std::optional<Index> n = n_hint;
  std::vector<WeightEntry> entries;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && starts_with(line, "%%MatrixMarket")) {
      matrix_market = true;
      if (line.find("coordinate") == std::string::npos) {
        throw IoError("only Matrix Market coordinate format is supported");
      }
      continue;
    }
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '%') continue;
    if (t[0] == '#') {
      // `# n=<count>` written by write_weights
      const auto pos = t.find("n=");
      if (pos != std::string::npos && !n) n = std::stoll(t.substr(pos + 2));
      continue;
    }
    std::istringstream fields(t);
    if (matrix_market && !size_seen) {
      Index rows = 0, cols = 0, nnz = 0;
      if (!(fields >> rows >> cols >> nnz) || rows != cols) {
        throw IoError("line " + std::to_string(line_no) + ": bad Matrix Market size line");
      }
      n = rows;
      size_seen = true;
      continue;
    }
    Index i = 0, j = 0;
    std::string wtoken;
    if (!(fields >> i >> j)) {
      throw IoError("line " + std::to_string(line_no) + ": expected `i j weight`");
    }
    double weight = 1.0;
    if (fields >> wtoken) weight = parse_real(wtoken);
    if (matrix_market) {
      --i;
      --j;
    }
    entries.push_back({i, j, weight});
  }
  if (!n) {
    Index max_index = -1;
    for (const auto& e : entries) max_index = std::max({max_index, e.row, e.col});
    n = max_index + 1;
  }
  const bool all_upper =
      std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.row < e.col; });
  const bool all_lower =
      std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.row > e.col; });
  if (!entries.empty() && (all_upper || all_lower)) {
    const std::size_t count = entries.size();
    for (std::size_t k = 0; k < count; ++k) {
      entries.push_back({entries[k].col, entries[k].row, entries[k].weight});
    }
  }
  return SpatialWeights::from_entries(*n, entries);
}

SpatialWeights read_weights(const std::filesystem::path& path, std::optional<Index> n_hint) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open weight file " + path.string());
  return read_weights(in, n_hint);
}

void write_weights(std::ostream& out, const SpatialWeights& w) {
  out << "# n=" << w.n() << '\n';
  for (const auto& e : w.entries()) {
    out << e.row << ' ' << e.col << ' ' << format_real(e.weight) << '\n';
  }
}

void write_weights(const std::filesystem::path& path, const SpatialWeights& w) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write weight file " + path.string());
  write_weights(out, w);
}

}  // namespace spatialvb
