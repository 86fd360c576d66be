#include "dtm/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "dtm/error.hpp"
#include "json.hpp"
#include "parallel.hpp"

namespace dtm {

GapDescriptor gap_descriptor(FeatureMapView map) {
    if (!map.dims.valid() || map.values.size() != map.dims.values()) {
        fail(ErrorKind::InvalidInput, "invalid feature map for GAP descriptor");
    }
    const std::size_t c = map.dims.channels;
    GapDescriptor d{std::vector<double>(c, 0.0), true};
    for (std::size_t cell = 0; cell < map.dims.cells(); ++cell) {
        const auto v = map.cell(cell);
        for (std::size_t ch = 0; ch < c; ++ch) d.values[ch] += v[ch];
    }
    const double cells = static_cast<double>(map.dims.cells());
    double sq = 0.0;
    for (double& v : d.values) {
        v /= cells;
        sq += v * v;
    }
    if (sq > 0.0) {
        const double norm = std::sqrt(sq);
        for (double& v : d.values) v /= norm;
    }
    return d;
}

double gap_similarity(const GapDescriptor& a, const GapDescriptor& b) {
    if (a.values.size() != b.values.size()) fail(ErrorKind::Shape, "GAP descriptors differ in length");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
    return dot;
}

GapIndex GapIndex::build(const EmbeddingStore& store, unsigned workers) {
    GapIndex index;
    index.descriptors_.resize(store.size());
    constexpr std::size_t kBlock = 512;
    const std::size_t blocks = (store.size() + kBlock - 1) / kBlock;
    detail::parallel_chunks(blocks, workers, [&](std::size_t block) {
        const std::size_t end = std::min<std::size_t>(store.size(), (block + 1) * kBlock);
        for (std::size_t i = block * kBlock; i < end; ++i) index.descriptors_[i] = gap_descriptor(store.record_view(i));
    });
    return index;
}

std::vector<RetrievalResult> GapIndex::search(const EmbeddingStore& store, const GapDescriptor& query,
                                              const SearchConfig& config) const {
    if (descriptors_.size() != store.size()) fail(ErrorKind::InvalidInput, "GAP index was built for another store");
    if (query.values.size() != store.dims().channels) {
        fail(ErrorKind::Shape, "query descriptor has " + std::to_string(query.values.size()) + " channels, store has " +
                                   std::to_string(store.dims().channels));
    }
    const auto ranked = select_top_k(store.size(), 1, config, [&](std::uint64_t i, std::span<double> out) {
        out[0] = gap_similarity(query, descriptors_[i]);
    });
    return to_results(ranked.front(), store);
}

std::vector<RetrievalResult> gap_search(const EmbeddingStore& store, FeatureMapView query_map,
                                        const SearchConfig& config) {
    if (!(query_map.dims == store.dims())) {
        fail(ErrorKind::Shape, "query dims " + to_string(query_map.dims) + " differ from store dims " +
                                   to_string(store.dims()));
    }
    const GapIndex index = GapIndex::build(store, config.workers);
    return index.search(store, gap_descriptor(query_map), config);
}

std::vector<RetrievalResult> di_rank(std::span<const DetectionRecord> detections, const std::string& target_class,
                                     std::size_t k) {
    if (target_class.empty()) fail(ErrorKind::InvalidInput, "target class must be non-empty");
    struct Entry {
        std::uint64_t index;
        const std::string* image_id;
        double score;
    };
    std::vector<Entry> entries;
    entries.reserve(detections.size());
    for (std::size_t i = 0; i < detections.size(); ++i) {
        double best = 0.0;
        for (const Detection& d : detections[i].detections) {
            if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
                fail(ErrorKind::Data, "confidence " + std::to_string(d.confidence) + " for image " +
                                          detections[i].image_id + " is outside [0, 1]");
            }
            if (d.class_name == target_class) best = std::max(best, d.confidence);
        }
        entries.push_back({i, &detections[i].image_id, best});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.score != b.score) return a.score > b.score;
        return *a.image_id < *b.image_id;
    });
    if (entries.size() > k) entries.resize(k);
    std::vector<RetrievalResult> out;
    out.reserve(entries.size());
    for (std::size_t r = 0; r < entries.size(); ++r) {
        out.push_back({static_cast<std::uint32_t>(r + 1), entries[r].index, *entries[r].image_id, entries[r].score});
    }
    return out;
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open detections file " + path.string());
    std::vector<DetectionRecord> records;
    std::unordered_map<std::string, std::size_t> slot;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const std::string id = j.at("image_id").get<std::string>();
            auto [it, inserted] = slot.emplace(id, records.size());
            if (inserted) records.push_back({id, {}});
            if (j.contains("class") && !j.at("class").is_null()) {
                records[it->second].detections.push_back(
                    {j.at("class").get<std::string>(), j.at("confidence").get<double>()});
            }
        } catch (const nlohmann::json::exception& ex) {
            fail(ErrorKind::Data, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return records;
}

}  // namespace dtm
