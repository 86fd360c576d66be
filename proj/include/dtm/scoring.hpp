#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dtm/featmap.hpp"

namespace dtm {

/// Materialized 4-D patchwise cosine tensor S[x, y, i, j]: sample cell (x, y)
/// against query cell (i, j). Entries for non-ROI query cells are 0.
/// Debug/oracle use only; the scoring path never builds it.
struct SimilarityTensor {
    GridDims dims;
    std::vector<float> values;

    float at(std::uint32_t x, std::uint32_t y, std::uint32_t i, std::uint32_t j) const noexcept {
        const std::size_t cells = dims.cells();
        return values[(std::size_t{y} * dims.width + x) * cells + std::size_t{j} * dims.width + i];
    }
};

enum class ScoreMapKind {
    /// Per query cell: best match over the sample divided by the ROI's cell area.
    Query,
    /// Per sample cell: best match against any ROI cell, no area division.
    Sample,
};

struct ScoreMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    ScoreMapKind kind = ScoreMapKind::Query;
    std::vector<double> values;

    double at(std::uint32_t x, std::uint32_t y) const noexcept { return values[std::size_t{y} * width + x]; }
};

SimilarityTensor similarity_tensor(FeatureMapView sample, const Template& tmpl);

ScoreMap score_map(FeatureMapView sample, const Template& tmpl);

/// Mean over ROIs of each ROI's mean best-match cosine. For a fixed template
/// this is a positive multiple of the mean of the query-side score map, and it
/// stays within [-1, 1].
double score(FeatureMapView sample, const Template& tmpl);

/// score() for every sample, in order. Results do not depend on `workers`.
std::vector<double> score_batch(std::span<const FeatureMapView> samples, const Template& tmpl,
                                unsigned workers = 1);

/// Sample-side match map used for heatmaps.
ScoreMap sample_match_map(FeatureMapView sample, const Template& tmpl);

/// Scores one sample against several templates, reading the sample once.
/// `out` must hold templates.size() values.
void score_many(FeatureMapView sample, std::span<const Template> templates, std::span<double> out);

}  // namespace dtm
