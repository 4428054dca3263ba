#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "spatialvb/spatial_core.hpp"

namespace spatialvb {

// Reads `i j weight` triplets, 0-based, one per line; blank lines and lines
// starting with '#' or '%' are skipped. A leading `%%MatrixMarket` banner
// switches to Matrix Market coordinate conventions: 1-based indices and a
// `rows cols nnz` size line. When every entry lies in one triangle the other
// triangle is filled by symmetry. Without a size line, n is `n_hint` or the
// largest index + 1.
SpatialWeights read_weights(std::istream& in, std::optional<Index> n_hint = std::nullopt);
SpatialWeights read_weights(const std::filesystem::path& path,
                            std::optional<Index> n_hint = std::nullopt);

// Writes 0-based triplets with a `# n=<n>` comment header.
void write_weights(std::ostream& out, const SpatialWeights& w);
void write_weights(const std::filesystem::path& path, const SpatialWeights& w);

}  // namespace spatialvb
