#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtm/scoring.hpp"
#include "dtm/search.hpp"
#include "dtm/store.hpp"

namespace dtm::cli {

/// DTM_WORKERS if set to a positive integer, else 1.
unsigned default_workers();

struct BuildStoreOptions {
    std::optional<std::filesystem::path> synth_config;
    std::vector<std::filesystem::path> inputs;  // existing store files to concatenate
    std::filesystem::path out;
    std::optional<std::filesystem::path> emit_queries;
    std::string query_class = "motorcycle";
    std::size_t query_count = 20;
    std::uint64_t query_seed = 0;
    unsigned workers = 1;
};

struct SearchOptions {
    std::filesystem::path store;
    std::filesystem::path query;
    std::size_t k = 10;
    std::filesystem::path out;
    unsigned workers = 1;
    std::size_t shard_size = 1024;
    std::optional<std::filesystem::path> heatmap_dir;
};

struct HeatmapOptions {
    std::filesystem::path store;
    std::filesystem::path query;
    std::uint64_t record = 0;
    std::filesystem::path out;
};

struct EvalOptions {
    std::filesystem::path store;
    std::filesystem::path queries_dir;
    std::string methods = "dtm,gap,random";
    std::size_t n = 100;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::string default_target;
};

struct GalleryOptions {
    std::filesystem::path results;
    std::filesystem::path manifest;  // a .manifest file or the store it belongs to
    std::filesystem::path out;
    std::optional<std::filesystem::path> heatmap_dir;
    std::string title = "Retrieval results";
};

struct InspectOptions {
    std::filesystem::path store;
    bool check_all = false;
};

// Each command returns the process exit status: 0 iff its artifact was fully
// written. Library errors are reported on `err` with a nonzero status.
int cmd_build_store(const BuildStoreOptions& options, std::ostream& out, std::ostream& err);
int cmd_search(const SearchOptions& options, std::ostream& out, std::ostream& err);
int cmd_heatmap(const HeatmapOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_gallery(const GalleryOptions& options, std::ostream& out, std::ostream& err);
int cmd_inspect(const InspectOptions& options, std::ostream& out, std::ostream& err);

/// Linear map of [min, max] onto [0, 255]; a flat map renders all zeros.
std::vector<std::uint8_t> to_gray(const ScoreMap& map);

/// Binary PGM (P5) plus "<path>.txt" holding the raw values, one row per line.
void write_heatmap(const ScoreMap& map, const std::filesystem::path& path);

std::string render_gallery(std::span<const RetrievalResult> results, std::span<const ManifestEntry> manifest,
                           const std::optional<std::filesystem::path>& heatmap_dir, const std::string& title,
                           const std::filesystem::path& page_dir);

}  // namespace dtm::cli
