#include "dtm/featmap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dtm/error.hpp"

namespace dtm {

std::string to_string(const GridDims& dims) {
    return std::to_string(dims.width) + "x" + std::to_string(dims.height) + "x" +
           std::to_string(dims.channels);
}

FeatureMap::FeatureMap(GridDims dims, std::vector<float> values, bool normalized)
    : dims_(dims), values_(std::move(values)), normalized_(normalized) {
    if (!dims_.valid()) fail(ErrorKind::InvalidInput, "feature map dims must be >= 1, got " + to_string(dims_));
    if (values_.size() != dims_.values()) {
        fail(ErrorKind::Shape, "feature map " + to_string(dims_) + " expects " +
                                   std::to_string(dims_.values()) + " values, got " +
                                   std::to_string(values_.size()));
    }
    for (float v : values_) {
        if (!std::isfinite(v)) fail(ErrorKind::InvalidInput, "feature map contains a non-finite value");
    }
}

FeatureMap FeatureMap::zeros(GridDims dims) { return FeatureMap(dims, std::vector<float>(dims.values(), 0.0f)); }

FeatureMap FeatureMap::from_view(FeatureMapView view) {
    return FeatureMap(view.dims, std::vector<float>(view.values.begin(), view.values.end()), view.normalized);
}

FeatureMap l2_normalize_channels(FeatureMapView map) {
    std::vector<float> out(map.values.begin(), map.values.end());
    const std::size_t c = map.dims.channels;
    for (std::size_t cell = 0; cell < map.dims.cells(); ++cell) {
        float* v = out.data() + cell * c;
        double sq = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            if (!std::isfinite(v[ch])) fail(ErrorKind::InvalidInput, "cannot normalize a non-finite value");
            sq += double{v[ch]} * v[ch];
        }
        if (sq == 0.0) continue;
        const double norm = std::sqrt(sq);
        for (std::size_t ch = 0; ch < c; ++ch) v[ch] = static_cast<float>(v[ch] / norm);
    }
    return FeatureMap(map.dims, std::move(out), true);
}

bool has_unit_cells(FeatureMapView map, double tolerance) {
    for (std::size_t cell = 0; cell < map.dims.cells(); ++cell) {
        double sq = 0.0;
        bool all_zero = true;
        for (float v : map.cell(cell)) {
            sq += double{v} * v;
            all_zero = all_zero && v == 0.0f;
        }
        if (all_zero) continue;
        if (std::abs(std::sqrt(sq) - 1.0) > tolerance) return false;
    }
    return true;
}

FeatureMap maxpool_downsample(FeatureMapView map, std::uint32_t kernel, std::uint32_t stride) {
    if (kernel < 1 || stride < 1) fail(ErrorKind::InvalidInput, "maxpool kernel and stride must be >= 1");
    if (kernel > map.dims.width || kernel > map.dims.height) {
        fail(ErrorKind::InvalidInput,
             "maxpool kernel " + std::to_string(kernel) + " larger than map " + to_string(map.dims));
    }
    const GridDims out_dims{(map.dims.width - kernel) / stride + 1, (map.dims.height - kernel) / stride + 1,
                            map.dims.channels};
    const std::size_t c = map.dims.channels;
    std::vector<float> out(out_dims.values(), -std::numeric_limits<float>::infinity());
    for (std::uint32_t oy = 0; oy < out_dims.height; ++oy) {
        for (std::uint32_t ox = 0; ox < out_dims.width; ++ox) {
            float* dst = out.data() + (std::size_t{oy} * out_dims.width + ox) * c;
            for (std::uint32_t ky = 0; ky < kernel; ++ky) {
                for (std::uint32_t kx = 0; kx < kernel; ++kx) {
                    auto src = map.cell(ox * stride + kx, oy * stride + ky);
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = std::max(dst[ch], src[ch]);
                }
            }
        }
    }
    return FeatureMap(out_dims, std::move(out), false);
}

void validate(const QuerySpec& query) {
    if (query.image_width == 0 || query.image_height == 0) {
        fail(ErrorKind::InvalidInput, "query '" + query.image_id + "' has zero pixel dimensions");
    }
    if (query.rois.empty()) fail(ErrorKind::InvalidInput, "query '" + query.image_id + "' has no ROIs");
    std::vector<bool> seen(query.rois.size(), false);
    for (const RoiBox& roi : query.rois) {
        if (roi.roi_id >= query.rois.size() || seen[roi.roi_id]) {
            fail(ErrorKind::InvalidInput, "ROI ids must be unique and contiguous from 0");
        }
        seen[roi.roi_id] = true;
        if (roi.x0 >= roi.x1 || roi.y0 >= roi.y1 || roi.x1 > query.image_width || roi.y1 > query.image_height) {
            fail(ErrorKind::InvalidInput, "ROI " + std::to_string(roi.roi_id) + " (" + std::to_string(roi.x0) +
                                              "," + std::to_string(roi.y0) + ")-(" + std::to_string(roi.x1) + "," +
                                              std::to_string(roi.y1) + ") lies outside the " +
                                              std::to_string(query.image_width) + "x" +
                                              std::to_string(query.image_height) + " image");
        }
    }
}

std::vector<std::uint32_t> Template::area_map() const {
    std::vector<std::uint32_t> map(dims_.cells(), 0);
    for (const TemplateCell& cell : cells_) map[std::size_t{cell.y} * dims_.width + cell.x] = cell.area;
    return map;
}

Template Template::from_cells(FeatureMapView normalized_map, std::span<const std::vector<CellXY>> roi_cells) {
    if (!normalized_map.normalized) fail(ErrorKind::Contract, "template source map must be channel-normalized");
    if (roi_cells.empty()) fail(ErrorKind::InvalidInput, "template needs at least one ROI");
    const GridDims dims = normalized_map.dims;
    constexpr std::uint32_t kFree = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> owner(dims.cells(), kFree);
    for (std::size_t roi = 0; roi < roi_cells.size(); ++roi) {
        if (roi_cells[roi].empty()) {
            fail(ErrorKind::InvalidInput, "ROI " + std::to_string(roi) + " owns no cells");
        }
        for (const CellXY& cell : roi_cells[roi]) {
            if (cell.x >= dims.width || cell.y >= dims.height) {
                fail(ErrorKind::InvalidInput, "template cell outside the " + to_string(dims) + " grid");
            }
            std::uint32_t& slot = owner[std::size_t{cell.y} * dims.width + cell.x];
            if (slot != kFree) fail(ErrorKind::InvalidInput, "duplicate template cell");
            slot = static_cast<std::uint32_t>(roi);
        }
    }

    Template t;
    t.dims_ = dims;
    t.roi_count_ = static_cast<std::uint32_t>(roi_cells.size());
    // Raster order fixes the reduction order of every score.
    for (std::uint32_t y = 0; y < dims.height; ++y) {
        for (std::uint32_t x = 0; x < dims.width; ++x) {
            const std::uint32_t roi = owner[std::size_t{y} * dims.width + x];
            if (roi == kFree) continue;
            t.cells_.push_back({x, y, roi, static_cast<std::uint32_t>(roi_cells[roi].size())});
            auto src = normalized_map.cell(x, y);
            t.vectors_.insert(t.vectors_.end(), src.begin(), src.end());
        }
    }
    return t;
}

std::vector<std::vector<CellXY>> project_roi_cells(std::uint32_t grid_width, std::uint32_t grid_height,
                                                   const QuerySpec& query) {
    validate(query);
    if (grid_width == 0 || grid_height == 0) fail(ErrorKind::InvalidInput, "grid dims must be >= 1");

    const std::uint64_t img_w = query.image_width;
    const std::uint64_t img_h = query.image_height;
    const std::uint64_t gw = grid_width;
    const std::uint64_t gh = grid_height;

    // Work in pixel coordinates scaled by the grid size so cell edges are integers:
    // cell x spans [x*W, (x+1)*W), ROI spans [x0*w, x1*w). Ownership needs
    // overlap_x * overlap_y >= 0.5 * W * H.
    auto overlap = [](std::uint64_t a0, std::uint64_t a1, std::uint64_t b0, std::uint64_t b1) -> std::uint64_t {
        const std::uint64_t lo = std::max(a0, b0);
        const std::uint64_t hi = std::min(a1, b1);
        return hi > lo ? hi - lo : 0;
    };

    constexpr std::uint32_t kFree = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> owner(grid_width * std::size_t{grid_height}, kFree);
    auto claim = [&](std::size_t cell, const RoiBox& roi) {
        std::uint32_t& slot = owner[cell];
        if (slot == kFree) {
            slot = roi.roi_id;
            return;
        }
        const RoiBox& held = query.rois[slot];
        const bool smaller = roi.area() < held.area();
        const bool tie_lower = roi.area() == held.area() && roi.roi_id < held.roi_id;
        if (smaller || tie_lower) slot = roi.roi_id;
    };

    std::vector<RoiBox> by_id(query.rois.size());
    for (const RoiBox& roi : query.rois) by_id[roi.roi_id] = roi;

    for (const RoiBox& roi : by_id) {
        bool any = false;
        for (std::uint32_t y = 0; y < grid_height; ++y) {
            const std::uint64_t oy = overlap(y * img_h, (y + 1) * img_h, roi.y0 * gh, roi.y1 * gh);
            if (oy == 0) continue;
            for (std::uint32_t x = 0; x < grid_width; ++x) {
                const std::uint64_t ox = overlap(x * img_w, (x + 1) * img_w, roi.x0 * gw, roi.x1 * gw);
                if (2 * ox * oy >= img_w * img_h) {
                    claim(std::size_t{y} * grid_width + x, roi);
                    any = true;
                }
            }
        }
        if (!any) {
            // Small objects fall back to the cell holding the ROI center.
            const auto cx = static_cast<std::uint32_t>(
                std::min<std::uint64_t>((std::uint64_t{roi.x0} + roi.x1) * gw / (2 * img_w), gw - 1));
            const auto cy = static_cast<std::uint32_t>(
                std::min<std::uint64_t>((std::uint64_t{roi.y0} + roi.y1) * gh / (2 * img_h), gh - 1));
            claim(std::size_t{cy} * grid_width + cx, roi);
        }
    }

    std::vector<std::vector<CellXY>> cells(by_id.size());
    for (std::uint32_t y = 0; y < grid_height; ++y) {
        for (std::uint32_t x = 0; x < grid_width; ++x) {
            const std::uint32_t roi = owner[std::size_t{y} * grid_width + x];
            if (roi != kFree) cells[roi].push_back({x, y});
        }
    }
    for (std::size_t roi = 0; roi < cells.size(); ++roi) {
        if (cells[roi].empty()) {
            fail(ErrorKind::InvalidInput,
                 "ROI " + std::to_string(roi) + " is entirely shadowed by smaller or lower-id ROIs");
        }
    }
    return cells;
}

Template project_roi(FeatureMapView query_map, const QuerySpec& query) {
    if (!query_map.normalized) fail(ErrorKind::Contract, "query map must be channel-normalized before projection");
    const auto cells = project_roi_cells(query_map.dims.width, query_map.dims.height, query);
    return Template::from_cells(query_map, cells);
}

}  // namespace dtm
