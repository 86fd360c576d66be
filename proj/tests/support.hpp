#pragma once

// Test-only helpers: seeded random maps and brute-force oracles that share no
// code with the library's scoring path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dtm/featmap.hpp"
#include "dtm/scoring.hpp"

namespace dtm::testing {

inline std::vector<float> random_values(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> v(n);
    for (float& x : v) x = normal(rng);
    return v;
}

/// Normalization computed in double, independent of l2_normalize_channels.
inline FeatureMap random_unit_map(std::mt19937_64& rng, GridDims dims) {
    std::vector<float> v = random_values(rng, dims.values());
    for (std::size_t cell = 0; cell < dims.cells(); ++cell) {
        double ss = 0.0;
        for (std::uint32_t ch = 0; ch < dims.channels; ++ch) ss += double(v[cell * dims.channels + ch]) * v[cell * dims.channels + ch];
        const double norm = std::sqrt(ss);
        for (std::uint32_t ch = 0; ch < dims.channels; ++ch) {
            float& x = v[cell * dims.channels + ch];
            x = norm > 0.0 ? static_cast<float>(x / norm) : 0.0f;
        }
    }
    return FeatureMap(dims, std::move(v), true);
}

inline GridDims random_dims(std::mt19937_64& rng, std::uint32_t max_side, std::uint32_t max_channels) {
    std::uniform_int_distribution<std::uint32_t> side(1, max_side);
    std::uniform_int_distribution<std::uint32_t> ch(1, max_channels);
    const std::uint32_t w = side(rng);
    const std::uint32_t h = side(rng);
    return {w, h, ch(rng)};
}

/// Random disjoint ROI cell lists covering `total` cells split over `rois` ROIs.
inline std::vector<std::vector<CellXY>> random_roi_cells(std::mt19937_64& rng, GridDims dims, std::size_t total,
                                                         std::size_t rois) {
    std::vector<CellXY> all;
    for (std::uint32_t y = 0; y < dims.height; ++y)
        for (std::uint32_t x = 0; x < dims.width; ++x) all.push_back({x, y});
    std::shuffle(all.begin(), all.end(), rng);
    total = std::clamp<std::size_t>(total, rois, all.size());
    std::vector<std::vector<CellXY>> out(rois);
    for (std::size_t i = 0; i < total; ++i) out[i < rois ? i : rng() % rois].push_back(all[i]);
    return out;
}

inline double dot64(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

/// Materialized S[x][y][i][j] in double over all query cells.
struct DenseS {
    GridDims dims;
    std::vector<double> s;

    double at(std::uint32_t x, std::uint32_t y, std::uint32_t i, std::uint32_t j) const {
        const std::size_t n = dims.cells();
        return s[(std::size_t{y} * dims.width + x) * n + std::size_t{j} * dims.width + i];
    }
};

inline DenseS dense_similarity(const FeatureMap& sample, const FeatureMap& query) {
    const GridDims d = sample.dims();
    DenseS out{d, std::vector<double>(d.cells() * d.cells())};
    for (std::uint32_t y = 0; y < d.height; ++y)
        for (std::uint32_t x = 0; x < d.width; ++x)
            for (std::uint32_t j = 0; j < d.height; ++j)
                for (std::uint32_t i = 0; i < d.width; ++i)
                    out.s[(std::size_t{y} * d.width + x) * d.cells() + std::size_t{j} * d.width + i] =
                        dot64(sample.cell(x, y), query.cell(i, j));
    return out;
}

/// Query-side map: best match over the sample, divided by ROI cell count.
inline std::vector<double> oracle_score_map(const FeatureMap& sample, const FeatureMap& query,
                                            const std::vector<std::vector<CellXY>>& rois) {
    const GridDims d = sample.dims();
    const DenseS s = dense_similarity(sample, query);
    std::vector<double> m(d.cells(), 0.0);
    for (const auto& roi : rois) {
        for (const CellXY& c : roi) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::uint32_t y = 0; y < d.height; ++y)
                for (std::uint32_t x = 0; x < d.width; ++x) best = std::max(best, s.at(x, y, c.x, c.y));
            m[std::size_t{c.y} * d.width + c.x] = best / double(roi.size());
        }
    }
    return m;
}

inline double oracle_score(const FeatureMap& sample, const FeatureMap& query,
                           const std::vector<std::vector<CellXY>>& rois) {
    const std::vector<double> m = oracle_score_map(sample, query, rois);
    double total = 0.0;
    for (double v : m) total += v;
    return total / double(rois.size());
}

inline std::vector<double> oracle_match_map(const FeatureMap& sample, const FeatureMap& query,
                                            const std::vector<std::vector<CellXY>>& rois) {
    const GridDims d = sample.dims();
    const DenseS s = dense_similarity(sample, query);
    std::vector<double> m(d.cells(), -std::numeric_limits<double>::infinity());
    for (std::uint32_t y = 0; y < d.height; ++y)
        for (std::uint32_t x = 0; x < d.width; ++x)
            for (const auto& roi : rois)
                for (const CellXY& c : roi)
                    m[std::size_t{y} * d.width + x] = std::max(m[std::size_t{y} * d.width + x], s.at(x, y, c.x, c.y));
    return m;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("dtm_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace dtm::testing
