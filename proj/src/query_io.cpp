#include "dtm/query_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "dtm/error.hpp"
#include "json.hpp"

namespace dtm {

QueryFile parse_query(const std::string& json_text) {
    QueryFile q;
    try {
        const auto j = nlohmann::json::parse(json_text);
        q.spec.image_id = j.at("image_id").get<std::string>();
        q.spec.image_width = j.at("image_width").get<std::uint32_t>();
        q.spec.image_height = j.at("image_height").get<std::uint32_t>();
        std::uint32_t roi_id = 0;
        for (const auto& r : j.at("rois")) {
            q.spec.rois.push_back({r.at("x0").get<std::uint32_t>(), r.at("y0").get<std::uint32_t>(),
                                   r.at("x1").get<std::uint32_t>(), r.at("y1").get<std::uint32_t>(), roi_id++});
        }
        const auto& rec = j.at("record");
        if (rec.contains("store_index")) q.record.store_index = rec.at("store_index").get<std::uint64_t>();
        if (rec.contains("file")) {
            q.record.file = rec.at("file").get<std::string>();
            q.record.file_index = rec.value("index", std::uint64_t{0});
        }
        if (j.contains("target_class") && !j.at("target_class").is_null()) {
            q.target_class = j.at("target_class").get<std::string>();
        }
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::Data, std::string("malformed query: ") + ex.what());
    }
    if (q.record.store_index.has_value() == q.record.file.has_value()) {
        fail(ErrorKind::Data, "query record must name exactly one of store_index or file");
    }
    validate(q.spec);
    return q;
}

std::string format_query(const QueryFile& query) {
    nlohmann::ordered_json j;
    j["image_id"] = query.spec.image_id;
    j["image_width"] = query.spec.image_width;
    j["image_height"] = query.spec.image_height;
    auto rois = nlohmann::ordered_json::array();
    std::vector<RoiBox> ordered = query.spec.rois;
    std::sort(ordered.begin(), ordered.end(), [](const RoiBox& a, const RoiBox& b) { return a.roi_id < b.roi_id; });
    for (const RoiBox& r : ordered) rois.push_back({{"x0", r.x0}, {"y0", r.y0}, {"x1", r.x1}, {"y1", r.y1}});
    j["rois"] = rois;
    nlohmann::ordered_json rec;
    if (query.record.store_index) rec["store_index"] = *query.record.store_index;
    if (query.record.file) {
        rec["file"] = *query.record.file;
        rec["index"] = query.record.file_index;
    }
    j["record"] = rec;
    if (query.target_class) j["target_class"] = *query.target_class;
    return j.dump(2);
}

QueryFile read_query_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open query file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return parse_query(buffer.str());
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

void write_query_file(const QueryFile& query, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    out << format_query(query) << '\n';
    if (!out) fail(ErrorKind::Io, "cannot write query file " + path.string());
}

std::vector<std::filesystem::path> list_query_files(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) fail(ErrorKind::Io, "query directory " + dir.string() + " not found");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

FeatureMap load_query_map(const QueryFile& query, const EmbeddingStore& store, const std::filesystem::path& base_dir) {
    FeatureMap map;
    if (query.record.store_index) {
        map = store.get_record(*query.record.store_index);
    } else {
        std::filesystem::path file = *query.record.file;
        if (file.is_relative() && !base_dir.empty()) file = base_dir / file;
        const EmbeddingStore own = EmbeddingStore::open(file);
        map = own.get_record(query.record.file_index);
    }
    if (!map.normalized()) map = l2_normalize_channels(map);
    return map;
}

std::string format_result_line(const RetrievalResult& result) {
    nlohmann::ordered_json j;
    j["rank"] = result.rank;
    j["index"] = result.index;
    j["image_id"] = result.image_id;
    j["score"] = result.score;
    return j.dump();
}

void write_results(std::span<const RetrievalResult> results, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write results to " + path.string());
    for (const RetrievalResult& r : results) out << format_result_line(r) << '\n';
    out.close();
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<RetrievalResult> read_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open results file " + path.string());
    std::vector<RetrievalResult> results;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            results.push_back({j.at("rank").get<std::uint32_t>(), j.at("index").get<std::uint64_t>(),
                               j.at("image_id").get<std::string>(), j.at("score").get<double>()});
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorKind::Data, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].rank != i + 1) fail(ErrorKind::Data, path.string() + ": ranks must run 1, 2, ... in order");
    }
    return results;
}

}  // namespace dtm
