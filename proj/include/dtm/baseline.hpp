#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dtm/featmap.hpp"
#include "dtm/search.hpp"
#include "dtm/store.hpp"

namespace dtm {

/// Whole-image descriptor: per-channel mean over all cells, L2-normalized.
struct GapDescriptor {
    std::vector<double> values;
    bool normalized = false;
};

GapDescriptor gap_descriptor(FeatureMapView map);

/// Cosine of two normalized descriptors; 0 if either is all-zero.
double gap_similarity(const GapDescriptor& a, const GapDescriptor& b);

/// Descriptors for every record of a store, computed once and reused across queries.
class GapIndex {
public:
    static GapIndex build(const EmbeddingStore& store, unsigned workers = 1);

    std::size_t size() const noexcept { return descriptors_.size(); }
    const GapDescriptor& descriptor(std::size_t index) const { return descriptors_.at(index); }

    std::vector<RetrievalResult> search(const EmbeddingStore& store, const GapDescriptor& query,
                                        const SearchConfig& config) const;

private:
    std::vector<GapDescriptor> descriptors_;
};

std::vector<RetrievalResult> gap_search(const EmbeddingStore& store, FeatureMapView query_map,
                                        const SearchConfig& config);

struct Detection {
    std::string class_name;
    double confidence = 0.0;
};

struct DetectionRecord {
    std::string image_id;
    std::vector<Detection> detections;
};

/// Detector-confidence ranking: an image scores the max confidence among its
/// detections of `target_class`, or 0 without one. Ties order by image id.
/// `index` in the results is the image's position in `detections`.
std::vector<RetrievalResult> di_rank(std::span<const DetectionRecord> detections, const std::string& target_class,
                                     std::size_t k);

/// Reads JSON lines {"image_id", "class", "confidence"} grouped by image in
/// first-appearance order. A line without "class" lists an image with no
/// detections.
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);

}  // namespace dtm
