#pragma once

// Prepared-dataset directories: a manifest.json plus one tensor-container
// file per domain ("pixels": n x h x w x c, "labels": n) and, optionally, an
// embedding text file.

#include "zsdg/data.hpp"
#include "zsdg/embeddings.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace zsdg {

struct PreparedData {
    std::string dataset;
    std::vector<Domain> domains;
    std::vector<Setting> settings;
    /// Written next to the manifest when present.
    std::optional<EmbeddingTable> embeddings;
    std::uint64_t seed = 0;
    std::size_t per_class_cap = 0;  // 0 = uncapped
    bool enlarge_canvas = false;
};

/// Refuses to overwrite an existing manifest unless `force` is set (IoError).
void write_prepared(const std::filesystem::path& dir, const PreparedData& data, bool force);

PreparedData read_prepared(const std::filesystem::path& dir);

std::filesystem::path manifest_path(const std::filesystem::path& dir);

}  // namespace zsdg
