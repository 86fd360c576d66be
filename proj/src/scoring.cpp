#include "dtm/scoring.hpp"

#include <limits>
#include <string>

#include "dtm/error.hpp"
#include "dtm/kernels.hpp"
#include "parallel.hpp"

namespace dtm {
namespace {

void check_pair(FeatureMapView sample, const Template& tmpl) {
    if (tmpl.size() == 0) fail(ErrorKind::Contract, "template has no ROI cells");
    if (!(sample.dims == tmpl.dims())) {
        fail(ErrorKind::Shape, "sample dims " + to_string(sample.dims) + " differ from template dims " +
                                   to_string(tmpl.dims()));
    }
    if (!sample.normalized) fail(ErrorKind::Contract, "sample map is not channel-normalized");
}

// Max over sample cells for each template cell; the only hot loop.
void best_matches(FeatureMapView sample, const Template& tmpl, float* best) {
    kernels::active().max_dot_per_probe(sample.values.data(), sample.dims.cells(), tmpl.vectors().data(),
                                        tmpl.size(), sample.dims.channels, best);
}

double reduce(const Template& tmpl, const float* best) {
    double sum = 0.0;
    const auto cells = tmpl.cells();
    for (std::size_t k = 0; k < cells.size(); ++k) sum += double{best[k]} / cells[k].area;
    return sum / tmpl.roi_count();
}

}  // namespace

SimilarityTensor similarity_tensor(FeatureMapView sample, const Template& tmpl) {
    check_pair(sample, tmpl);
    const auto& ref = kernels::table(kernels::Isa::Scalar);
    const GridDims dims = sample.dims;
    const std::size_t cells = dims.cells();
    SimilarityTensor s{dims, std::vector<float>(cells * cells, 0.0f)};
    for (std::size_t k = 0; k < tmpl.size(); ++k) {
        const TemplateCell& q = tmpl.cells()[k];
        const std::size_t q_index = std::size_t{q.y} * dims.width + q.x;
        for (std::size_t cell = 0; cell < cells; ++cell) {
            s.values[cell * cells + q_index] = ref.dot(sample.cell(cell).data(), tmpl.vector(k).data(), dims.channels);
        }
    }
    return s;
}

ScoreMap score_map(FeatureMapView sample, const Template& tmpl) {
    check_pair(sample, tmpl);
    std::vector<float> best(tmpl.size());
    best_matches(sample, tmpl, best.data());
    ScoreMap map{sample.dims.width, sample.dims.height, ScoreMapKind::Query,
                 std::vector<double>(sample.dims.cells(), 0.0)};
    for (std::size_t k = 0; k < tmpl.size(); ++k) {
        const TemplateCell& q = tmpl.cells()[k];
        map.values[std::size_t{q.y} * map.width + q.x] = double{best[k]} / q.area;
    }
    return map;
}

double score(FeatureMapView sample, const Template& tmpl) {
    check_pair(sample, tmpl);
    std::vector<float> best(tmpl.size());
    best_matches(sample, tmpl, best.data());
    return reduce(tmpl, best.data());
}

std::vector<double> score_batch(std::span<const FeatureMapView> samples, const Template& tmpl, unsigned workers) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!(samples[i].dims == tmpl.dims())) {
            fail(ErrorKind::Shape, "sample " + std::to_string(i) + " has dims " + to_string(samples[i].dims) +
                                       ", template has " + to_string(tmpl.dims()));
        }
    }
    std::vector<double> out(samples.size());
    constexpr std::size_t kBlock = 256;
    const std::size_t blocks = (samples.size() + kBlock - 1) / kBlock;
    detail::parallel_chunks(blocks, workers, [&](std::size_t block) {
        std::vector<float> best(tmpl.size());
        const std::size_t end = std::min(samples.size(), (block + 1) * kBlock);
        for (std::size_t i = block * kBlock; i < end; ++i) {
            check_pair(samples[i], tmpl);
            best_matches(samples[i], tmpl, best.data());
            out[i] = reduce(tmpl, best.data());
        }
    });
    return out;
}

ScoreMap sample_match_map(FeatureMapView sample, const Template& tmpl) {
    check_pair(sample, tmpl);
    std::vector<float> best(sample.dims.cells());
    kernels::active().max_dot_per_row(sample.values.data(), sample.dims.cells(), tmpl.vectors().data(), tmpl.size(),
                                      sample.dims.channels, best.data());
    return ScoreMap{sample.dims.width, sample.dims.height, ScoreMapKind::Sample,
                    std::vector<double>(best.begin(), best.end())};
}

void score_many(FeatureMapView sample, std::span<const Template> templates, std::span<double> out) {
    if (out.size() != templates.size()) fail(ErrorKind::InvalidInput, "score_many output size mismatch");
    std::size_t widest = 0;
    for (const Template& t : templates) widest = std::max(widest, t.size());
    std::vector<float> best(widest);
    for (std::size_t t = 0; t < templates.size(); ++t) {
        check_pair(sample, templates[t]);
        best_matches(sample, templates[t], best.data());
        out[t] = reduce(templates[t], best.data());
    }
}

}  // namespace dtm
