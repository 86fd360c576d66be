#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "dtm/error.hpp"
#include "dtm/kernels.hpp"
#include "dtm/scoring.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace dtm;
using namespace dtm::testing;

namespace {

struct Instance {
    FeatureMap query;
    FeatureMap sample;
    std::vector<std::vector<CellXY>> rois;
    Template tmpl;
};

Instance random_instance(std::mt19937_64& rng, std::uint32_t max_side, std::uint32_t max_channels,
                         std::size_t max_rois = 2) {
    Instance in;
    const GridDims dims = random_dims(rng, max_side, max_channels);
    in.query = random_unit_map(rng, dims);
    in.sample = random_unit_map(rng, dims);
    const std::size_t rois = 1 + rng() % std::min<std::size_t>(max_rois, dims.cells());
    const std::size_t total = rois + rng() % (dims.cells() - rois + 1);
    in.rois = random_roi_cells(rng, dims, total, rois);
    in.tmpl = Template::from_cells(in.query, in.rois);
    return in;
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected dtm::Error");
    return ErrorKind::InvalidInput;
}

FeatureMap unit_map(GridDims dims, std::vector<float> v) { return FeatureMap(dims, std::move(v), true); }

}  // namespace

TEST_SUITE("scoring") {

TEST_CASE("similarity tensor: orthogonal and identical cells") {
    const FeatureMap query = unit_map({2, 1, 2}, {1, 0, 0, 1});
    const FeatureMap sample = unit_map({2, 1, 2}, {0, 1, 1, 0});
    std::vector<std::vector<CellXY>> rois{{{0, 0}}};
    const Template t = Template::from_cells(query, rois);
    const SimilarityTensor s = similarity_tensor(sample, t);
    CHECK(s.at(0, 0, 0, 0) == 0.0f);
    CHECK(s.at(1, 0, 0, 0) == 1.0f);
    // non-ROI query cell stays 0
    CHECK(s.at(1, 0, 1, 0) == 0.0f);
}

TEST_CASE("similarity tensor: equals the dense oracle on ROI cells") {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 50; ++t) {
        const GridDims dims{3, 3, 4};
        const FeatureMap q = random_unit_map(rng, dims);
        const FeatureMap s = random_unit_map(rng, dims);
        const auto rois = random_roi_cells(rng, dims, 1 + rng() % 9, 1);
        const Template tmpl = Template::from_cells(q, rois);
        const SimilarityTensor st = similarity_tensor(s, tmpl);
        const DenseS dense = dense_similarity(s, q);
        const auto area = tmpl.area_map();
        for (std::uint32_t y = 0; y < 3; ++y)
            for (std::uint32_t x = 0; x < 3; ++x)
                for (std::uint32_t j = 0; j < 3; ++j)
                    for (std::uint32_t i = 0; i < 3; ++i) {
                        const double want = area[j * 3 + i] ? dense.at(x, y, i, j) : 0.0;
                        CHECK(std::fabs(st.at(x, y, i, j) - want) <= 1e-6);
                    }
    }
}

TEST_CASE("score map: area division") {
    // single ROI cell whose best match is exact
    const FeatureMap query = unit_map({2, 1, 2}, {1, 0, 0, 1});
    std::vector<std::vector<CellXY>> one{{{0, 0}}};
    const ScoreMap m1 = score_map(query, Template::from_cells(query, one));
    CHECK(m1.kind == ScoreMapKind::Query);
    CHECK(m1.at(0, 0) == doctest::Approx(1.0));
    CHECK(m1.at(1, 0) == 0.0);

    // four ROI cells, each best match 0.8
    const float a = 0.8f, b = 0.6f;
    std::vector<float> qv, sv;
    for (int i = 0; i < 4; ++i) {
        qv.insert(qv.end(), {1, 0});
        sv.insert(sv.end(), {a, b});
    }
    const FeatureMap q4 = unit_map({2, 2, 2}, qv);
    const FeatureMap s4 = unit_map({2, 2, 2}, sv);
    std::vector<std::vector<CellXY>> four{{{0, 0}, {1, 0}, {0, 1}, {1, 1}}};
    const Template t4 = Template::from_cells(q4, four);
    const ScoreMap m4 = score_map(s4, t4);
    for (double v : m4.values) CHECK(v == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(score(s4, t4) == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("score: two ROIs average their means") {
    // ROI 0 matches exactly, ROI 1 matches at cosine 0.5
    const float h = std::sqrt(3.0f) / 2.0f;
    const FeatureMap query = unit_map({2, 1, 2}, {1, 0, 0, 1});
    const FeatureMap sample = unit_map({2, 1, 2}, {1, 0, 1, 0});
    std::vector<std::vector<CellXY>> rois{{{0, 0}}, {{1, 0}}};
    const Template t = Template::from_cells(query, rois);
    // the second sample cell must sit at 60 degrees from (0,1) but no closer to it than (1,0) is
    const FeatureMap s2 = unit_map({2, 1, 2}, {1, 0, h, 0.5f});
    CHECK(score(s2, t) == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(score(sample, t) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("score: self match is one anywhere") {
    std::mt19937_64 rng(32);
    for (int t = 0; t < 100; ++t) {
        Instance in = random_instance(rng, 8, 16, 3);
        CHECK(std::fabs(score(in.query, in.tmpl) - 1.0) <= 1e-6);
    }
}

TEST_CASE("score: oracle equivalence on random instances") {
    std::mt19937_64 rng(33);
    for (int t = 0; t < 300; ++t) {
        Instance in = random_instance(rng, 8, 16, 3);
        const double want = oracle_score(in.sample, in.query, in.rois);
        CHECK(std::fabs(score(in.sample, in.tmpl) - want) <= 1e-5);

        const ScoreMap m = score_map(in.sample, in.tmpl);
        const auto om = oracle_score_map(in.sample, in.query, in.rois);
        for (std::size_t i = 0; i < om.size(); ++i) CHECK(std::fabs(m.values[i] - om[i]) <= 1e-6);

        const ScoreMap sm = sample_match_map(in.sample, in.tmpl);
        CHECK(sm.kind == ScoreMapKind::Sample);
        const auto os = oracle_match_map(in.sample, in.query, in.rois);
        for (std::size_t i = 0; i < os.size(); ++i) CHECK(std::fabs(sm.values[i] - os[i]) <= 1e-6);
    }
}

TEST_CASE("score: frozen numpy cases") {
    std::ifstream in(std::string(DTM_TEST_FIXTURES) + "/score_cases.json");
    REQUIRE(in);
    const nlohmann::json cases = nlohmann::json::parse(in);
    REQUIRE(cases.size() == 40);
    for (const auto& c : cases) {
        const GridDims dims{c["width"], c["height"], c["channels"]};
        const FeatureMap q(dims, c["query"].get<std::vector<float>>(), true);
        const FeatureMap s(dims, c["sample"].get<std::vector<float>>(), true);
        std::vector<std::vector<CellXY>> rois;
        for (const auto& roi : c["rois"]) {
            rois.emplace_back();
            for (const auto& xy : roi) rois.back().push_back({xy[0], xy[1]});
        }
        const Template t = Template::from_cells(q, rois);
        INFO("seed " << c["seed"].get<int>());
        CHECK(std::fabs(score(s, t) - c["score"].get<double>()) <= 1e-5);
        const auto want_map = c["score_map"].get<std::vector<double>>();
        const auto want_match = c["match_map"].get<std::vector<double>>();
        const ScoreMap m = score_map(s, t);
        const ScoreMap sm = sample_match_map(s, t);
        for (std::size_t i = 0; i < want_map.size(); ++i) {
            CHECK(std::fabs(m.values[i] - want_map[i]) <= 1e-5);
            CHECK(std::fabs(sm.values[i] - want_match[i]) <= 1e-5);
        }
    }
}

TEST_CASE("property: spatial permutation of the sample") {
    std::mt19937_64 rng(34);
    for (int t = 0; t < 100; ++t) {
        Instance in = random_instance(rng, 8, 16, 2);
        const GridDims d = in.sample.dims();
        std::vector<std::size_t> perm(d.cells());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<float> moved(d.values());
        for (std::size_t i = 0; i < perm.size(); ++i)
            std::copy_n(in.sample.values().begin() + perm[i] * d.channels, d.channels,
                        moved.begin() + i * d.channels);
        const FeatureMap p(d, moved, true);
        CHECK(std::fabs(score(p, in.tmpl) - score(in.sample, in.tmpl)) <= 1e-6);
    }
}

TEST_CASE("property: positive rescaling before normalization") {
    std::mt19937_64 rng(35);
    for (int t = 0; t < 50; ++t) {
        Instance in = random_instance(rng, 6, 12);
        const GridDims d = in.sample.dims();
        const auto raw = random_values(rng, d.values());
        const float lambda = std::ldexp(1.0f, int(rng() % 20) - 10);
        std::vector<float> scaled(raw);
        for (float& v : scaled) v *= lambda;
        const FeatureMap a = l2_normalize_channels(FeatureMap(d, raw));
        const FeatureMap b = l2_normalize_channels(FeatureMap(d, scaled));
        CHECK(score(a, in.tmpl) == score(b, in.tmpl));
    }
}

TEST_CASE("property: scores never exceed one") {
    std::mt19937_64 rng(36);
    for (int t = 0; t < 200; ++t) {
        Instance in = random_instance(rng, 8, 16, 3);
        const double s = score(in.sample, in.tmpl);
        CHECK(s <= 1.0 + 1e-6);
        CHECK(s >= -1.0 - 1e-6);
    }
}

TEST_CASE("property: copying an ROI cell over a non-best cell never lowers the score") {
    std::mt19937_64 rng(37);
    int edits = 0;
    for (int t = 0; t < 400; ++t) {
        Instance in = random_instance(rng, 8, 16, 2);
        const GridDims d = in.sample.dims();
        // sample cells that are the best match of some ROI cell must survive
        const DenseS s = dense_similarity(in.sample, in.query);
        std::vector<bool> holds_best(d.cells(), false);
        for (const TemplateCell& c : in.tmpl.cells()) {
            std::size_t arg = 0;
            for (std::size_t k = 1; k < d.cells(); ++k)
                if (s.at(k % d.width, k / d.width, c.x, c.y) > s.at(arg % d.width, arg / d.width, c.x, c.y)) arg = k;
            holds_best[arg] = true;
        }
        const std::size_t target = rng() % d.cells();
        if (holds_best[target]) continue;
        const double before = score(in.sample, in.tmpl);
        FeatureMap edited = in.sample;
        const auto v = in.tmpl.vector(rng() % in.tmpl.size());
        std::copy(v.begin(), v.end(), edited.mutable_cell(target % d.width, target / d.width).begin());
        CHECK(score(edited, in.tmpl) >= before - 1e-7);
        ++edits;
    }
    CHECK(edits > 100);
}

TEST_CASE("property: a single-cell template is maximized by any copy of its cell") {
    std::mt19937_64 rng(43);
    for (int t = 0; t < 100; ++t) {
        const GridDims d = random_dims(rng, 8, 16);
        const FeatureMap q = random_unit_map(rng, d);
        FeatureMap s = random_unit_map(rng, d);
        const auto rois = random_roi_cells(rng, d, 1, 1);
        const Template tmpl = Template::from_cells(q, rois);
        const double before = score(s, tmpl);
        const auto v = tmpl.vector(0);
        std::copy(v.begin(), v.end(), s.mutable_cell(rng() % d.width, rng() % d.height).begin());
        const double after = score(s, tmpl);
        CHECK(after >= before);
        CHECK(std::fabs(after - 1.0) <= 1e-6);
    }
}

TEST_CASE("property: two-ROI score is the mean of single-ROI scores") {
    std::mt19937_64 rng(38);
    for (int t = 0; t < 200; ++t) {
        GridDims d = random_dims(rng, 8, 16);
        if (d.cells() < 2) d.width = 2;
        const FeatureMap q = random_unit_map(rng, d);
        const FeatureMap s = random_unit_map(rng, d);
        const auto rois = random_roi_cells(rng, d, 2 + rng() % (d.cells() - 1), 2);
        std::vector<std::vector<CellXY>> a{rois[0]}, b{rois[1]};
        const double both = score(s, Template::from_cells(q, rois));
        const double sa = score(s, Template::from_cells(q, a));
        const double sb = score(s, Template::from_cells(q, b));
        CHECK(std::fabs(both - (sa + sb) / 2.0) <= 1e-6);
    }
}

TEST_CASE("zero sample cells contribute similarity zero") {
    const FeatureMap query = unit_map({2, 1, 2}, {-1, 0, 0, 1});
    const FeatureMap sample = unit_map({2, 1, 2}, {0, 0, 1, 0});
    std::vector<std::vector<CellXY>> rois{{{0, 0}}};
    // the only alternative has cosine -1, so the zero cell wins
    CHECK(score(sample, Template::from_cells(query, rois)) == 0.0);
}

TEST_CASE("score_batch equals per-sample score bit for bit") {
    std::mt19937_64 rng(39);
    const GridDims d{6, 5, 24};
    const FeatureMap q = random_unit_map(rng, d);
    const auto rois = random_roi_cells(rng, d, 7, 2);
    const Template t = Template::from_cells(q, rois);
    std::vector<FeatureMap> samples;
    for (int i = 0; i < 1000; ++i) samples.push_back(random_unit_map(rng, d));
    samples[417] = q;
    std::vector<FeatureMapView> views(samples.begin(), samples.end());

    const auto serial = score_batch(views, t, 1);
    const auto parallel = score_batch(views, t, 4);
    REQUIRE(serial.size() == 1000);
    for (std::size_t i = 0; i < views.size(); ++i) {
        CHECK(serial[i] == score(views[i], t));
        CHECK(parallel[i] == serial[i]);
    }
    CHECK(std::fabs(serial[417] - 1.0) <= 1e-6);
    CHECK(std::max_element(serial.begin(), serial.end()) - serial.begin() == 417);

    std::vector<FeatureMapView> one{views[3]};
    CHECK(score_batch(one, t)[0] == score(views[3], t));
    CHECK(score_batch({}, t).empty());
}

TEST_CASE("score_many equals score per template") {
    std::mt19937_64 rng(40);
    const GridDims d{4, 4, 16};
    const FeatureMap s = random_unit_map(rng, d);
    std::vector<Template> templates;
    for (int i = 0; i < 7; ++i) {
        const FeatureMap q = random_unit_map(rng, d);
        templates.push_back(Template::from_cells(q, random_roi_cells(rng, d, 1 + rng() % 5, 1 + rng() % 2)));
    }
    std::vector<double> out(templates.size());
    score_many(s, templates, out);
    for (std::size_t i = 0; i < templates.size(); ++i) CHECK(out[i] == score(s, templates[i]));
}

TEST_CASE("every kernel variant gives the same ranking inputs within tolerance") {
    std::mt19937_64 rng(41);
    const kernels::Isa before = kernels::active().isa;
    for (int t = 0; t < 50; ++t) {
        Instance in = random_instance(rng, 8, 64, 2);
        kernels::select(kernels::Isa::Scalar);
        const double ref = score(in.sample, in.tmpl);
        for (kernels::Isa isa : {kernels::Isa::Avx2, kernels::Isa::Neon}) {
            if (!kernels::available(isa)) continue;
            kernels::select(isa);
            CHECK(std::fabs(score(in.sample, in.tmpl) - ref) <= 1e-6);
        }
    }
    kernels::select(before);
}

TEST_CASE("scoring errors") {
    std::mt19937_64 rng(42);
    const FeatureMap q = random_unit_map(rng, {3, 3, 4});
    std::vector<std::vector<CellXY>> rois{{{1, 1}}};
    const Template t = Template::from_cells(q, rois);
    const FeatureMap other = random_unit_map(rng, {3, 2, 4});
    CHECK(kind_of([&] { score(other, t); }) == ErrorKind::Shape);
    FeatureMap raw = q;
    raw.set_normalized(false);
    CHECK(kind_of([&] { score(raw, t); }) == ErrorKind::Contract);
    CHECK(kind_of([&] { score(q, Template{}); }) == ErrorKind::Contract);

    std::vector<FeatureMapView> batch{q.view(), q.view(), other.view()};
    try {
        score_batch(batch, t);
        FAIL("expected Shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Shape);
        CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
    }
}

}  // TEST_SUITE
