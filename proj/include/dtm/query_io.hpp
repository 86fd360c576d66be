#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dtm/featmap.hpp"
#include "dtm/search.hpp"
#include "dtm/store.hpp"

namespace dtm {

/// Where a query's feature map lives: a record of the searched store, or a
/// record of a standalone store file (path relative to the query file).
struct RecordRef {
    std::optional<std::uint64_t> store_index;
    std::optional<std::string> file;
    std::uint64_t file_index = 0;
};

/// Serialized query:
///   {"image_id": "...", "image_width": W, "image_height": H,
///    "rois": [{"x0":..,"y0":..,"x1":..,"y1":..}, ...],
///    "record": {"store_index": i} | {"file": "q.dtms", "index": 0},
///    "target_class": "..."}          (target_class optional)
/// ROI ids follow array order.
struct QueryFile {
    QuerySpec spec;
    RecordRef record;
    std::optional<std::string> target_class;
};

QueryFile parse_query(const std::string& json_text);
std::string format_query(const QueryFile& query);

QueryFile read_query_file(const std::filesystem::path& path);
void write_query_file(const QueryFile& query, const std::filesystem::path& path);

/// Query files (*.json) in a directory, sorted by file name.
std::vector<std::filesystem::path> list_query_files(const std::filesystem::path& dir);

/// Loads the query's feature map, channel-normalized. `base_dir` resolves
/// relative record files.
FeatureMap load_query_map(const QueryFile& query, const EmbeddingStore& store,
                          const std::filesystem::path& base_dir = {});

/// One JSON object per line: {"rank", "index", "image_id", "score"}.
std::string format_result_line(const RetrievalResult& result);
void write_results(std::span<const RetrievalResult> results, const std::filesystem::path& path);
std::vector<RetrievalResult> read_results(const std::filesystem::path& path);

}  // namespace dtm
