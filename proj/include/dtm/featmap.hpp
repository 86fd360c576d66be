#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dtm {

/// Spatial grid and channel depth of a feature map. Values are laid out
/// row-major with channels innermost: index = (y * width + x) * channels + ch.
struct GridDims {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 0;

    std::size_t cells() const noexcept { return std::size_t{width} * height; }
    std::size_t values() const noexcept { return cells() * channels; }
    bool valid() const noexcept { return width >= 1 && height >= 1 && channels >= 1; }

    friend bool operator==(const GridDims&, const GridDims&) = default;
};

std::string to_string(const GridDims& dims);

/// Non-owning view of a feature map (e.g. a record inside a mapped store).
struct FeatureMapView {
    GridDims dims;
    std::span<const float> values;
    bool normalized = false;

    std::span<const float> cell(std::size_t cell_index) const noexcept {
        return values.subspan(cell_index * dims.channels, dims.channels);
    }
    std::span<const float> cell(std::uint32_t x, std::uint32_t y) const noexcept {
        return cell(std::size_t{y} * dims.width + x);
    }
};

class FeatureMap {
public:
    FeatureMap() = default;

    /// Validates dims, value count and finiteness. `normalized` is a claim by the
    /// caller; use l2_normalize_channels() to establish it.
    FeatureMap(GridDims dims, std::vector<float> values, bool normalized = false);

    static FeatureMap zeros(GridDims dims);
    static FeatureMap from_view(FeatureMapView view);

    const GridDims& dims() const noexcept { return dims_; }
    std::span<const float> values() const noexcept { return values_; }
    std::span<float> mutable_values() noexcept { return values_; }
    bool normalized() const noexcept { return normalized_; }
    void set_normalized(bool flag) noexcept { normalized_ = flag; }

    std::span<const float> cell(std::uint32_t x, std::uint32_t y) const noexcept {
        return view().cell(x, y);
    }
    std::span<float> mutable_cell(std::uint32_t x, std::uint32_t y) noexcept {
        return std::span<float>(values_).subspan((std::size_t{y} * dims_.width + x) * dims_.channels,
                                                 dims_.channels);
    }

    FeatureMapView view() const noexcept { return {dims_, values_, normalized_}; }
    operator FeatureMapView() const noexcept { return view(); }

private:
    GridDims dims_{};
    std::vector<float> values_;
    bool normalized_ = false;
};

/// Divides each cell's channel vector by its L2 norm. All-zero cells stay zero.
FeatureMap l2_normalize_channels(FeatureMapView map);

/// True when every cell has unit norm within `tolerance` or is all-zero.
bool has_unit_cells(FeatureMapView map, double tolerance = 1e-4);

/// Per-channel max over kernel x kernel windows. Output dims are
/// floor((dim - kernel) / stride) + 1; the normalized flag is cleared.
FeatureMap maxpool_downsample(FeatureMapView map, std::uint32_t kernel = 2, std::uint32_t stride = 2);

/// Half-open pixel rectangle in the query image frame.
struct RoiBox {
    std::uint32_t x0 = 0;
    std::uint32_t y0 = 0;
    std::uint32_t x1 = 0;
    std::uint32_t y1 = 0;
    std::uint32_t roi_id = 0;

    std::uint64_t area() const noexcept {
        return std::uint64_t{x1 - x0} * std::uint64_t{y1 - y0};
    }
};

struct QuerySpec {
    std::string image_id;
    std::uint32_t image_width = 0;
    std::uint32_t image_height = 0;
    std::vector<RoiBox> rois;
};

/// Throws InvalidInput when the query violates the ROI invariants.
void validate(const QuerySpec& query);

struct CellXY {
    std::uint32_t x = 0;
    std::uint32_t y = 0;

    friend bool operator==(const CellXY&, const CellXY&) = default;
};

struct TemplateCell {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    std::uint32_t roi_id = 0;
    /// Cell count of the owning ROI.
    std::uint32_t area = 0;
};

/// Sparse query template: only ROI cells are kept, the rest of the query map is
/// implicitly zero. Cell vectors are stored contiguously in `cells` order.
class Template {
public:
    Template() = default;

    const GridDims& dims() const noexcept { return dims_; }
    std::uint32_t roi_count() const noexcept { return roi_count_; }
    std::span<const TemplateCell> cells() const noexcept { return cells_; }
    std::size_t size() const noexcept { return cells_.size(); }

    /// Contiguous [size() x channels] block of cell vectors.
    std::span<const float> vectors() const noexcept { return vectors_; }
    std::span<const float> vector(std::size_t i) const noexcept {
        return std::span<const float>(vectors_).subspan(i * dims_.channels, dims_.channels);
    }

    /// Dense area map A: owning ROI cell count at ROI cells, 0 elsewhere.
    std::vector<std::uint32_t> area_map() const;

    /// Builds a template from explicit per-ROI cell lists (index = roi_id).
    /// Requires a normalized map, non-empty disjoint in-bounds cell sets.
    static Template from_cells(FeatureMapView normalized_map,
                               std::span<const std::vector<CellXY>> roi_cells);

private:
    GridDims dims_{};
    std::uint32_t roi_count_ = 0;
    std::vector<TemplateCell> cells_;
    std::vector<float> vectors_;
};

/// Cells owned by each ROI when a width x height grid is laid linearly over
/// the query image. Index of the outer vector is roi_id.
std::vector<std::vector<CellXY>> project_roi_cells(std::uint32_t grid_width,
                                                   std::uint32_t grid_height,
                                                   const QuerySpec& query);

/// Projects the query's ROIs into the normalized query feature map.
Template project_roi(FeatureMapView query_map, const QuerySpec& query);

}  // namespace dtm
