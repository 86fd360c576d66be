#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <vector>

#include "commands.hpp"
#include "doctest.h"
#include "dtm/eval.hpp"
#include "dtm/query_io.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace dtm;
using namespace dtm::cli;
using namespace dtm::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

SynthConfig tiny_config(std::uint64_t n = 100) {
    SynthConfig c = default_synth_config();
    c.dims = {6, 5, 16};
    c.record_count = n;
    c.seed = 5;
    c.cell_pixels = 8;
    return c;
}

// Writes a synthetic config, builds the store and emits queries.
struct Built {
    TempDir dir{"cli"};
    fs::path store;
    fs::path queries;

    explicit Built(const SynthConfig& c, std::size_t query_count = 4) {
        std::ofstream(dir / "synth.json") << format_synth_config(c);
        store = dir / "s.dtms";
        queries = dir / "q";
        BuildStoreOptions o;
        o.synth_config = dir / "synth.json";
        o.out = store;
        o.emit_queries = queries;
        o.query_count = query_count;
        std::ostringstream out, err;
        REQUIRE(cmd_build_store(o, out, err) == 0);
    }
};

struct PgmImage {
    std::uint32_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels;
};

PgmImage read_pgm(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::string magic;
    int maxval = 0;
    PgmImage img;
    in >> magic >> img.width >> img.height >> maxval;
    in.get();
    REQUIRE(magic == "P5");
    REQUIRE(maxval == 255);
    img.pixels.resize(std::size_t{img.width} * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    REQUIRE(in.gcount() == std::streamsize(img.pixels.size()));
    return img;
}

int run_tool(const std::string& args) {
    const std::string cmd = std::string(DTM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("build-store from a synthetic config") {
    TempDir dir("cli");
    const SynthConfig c = tiny_config();
    std::ofstream(dir / "synth.json") << format_synth_config(c);
    BuildStoreOptions o;
    o.synth_config = dir / "synth.json";
    o.out = dir / "s.dtms";
    std::ostringstream out, err;
    REQUIRE(cmd_build_store(o, out, err) == 0);
    const EmbeddingStore s = EmbeddingStore::open(o.out);
    CHECK(s.size() == 100);
    CHECK(out.str().find("records 100 dims 6x5x16") != std::string::npos);

    // the printed checksum matches the library generator
    const SynthDataset ds = generate_synthetic(c, dir / "oracle.dtms");
    std::ostringstream hex;
    hex << std::hex << ds.payload_checksum;
    CHECK(out.str().find(hex.str()) != std::string::npos);
    CHECK(slurp(o.out) == slurp(dir / "oracle.dtms"));
}

TEST_CASE("build-store concatenates stores and rejects mixed dims") {
    TempDir dir("cli");
    std::mt19937_64 rng(91);
    std::vector<FeatureMap> a{random_unit_map(rng, {2, 2, 4}), random_unit_map(rng, {2, 2, 4})};
    std::vector<FeatureMap> b{random_unit_map(rng, {2, 2, 4})};
    std::vector<FeatureMap> c{random_unit_map(rng, {2, 3, 4})};
    write_store(a, std::vector<ManifestEntry>{{0, "a0", {"x"}, {}}, {1, "a1", {}, {}}}, dir / "a.dtms");
    write_store(b, std::vector<ManifestEntry>{{0, "b0", {}, "b0.png"}}, dir / "b.dtms");
    write_store(c, std::vector<ManifestEntry>{{0, "c0", {}, {}}}, dir / "c.dtms");

    BuildStoreOptions o;
    o.inputs = {dir / "a.dtms", dir / "b.dtms"};
    o.out = dir / "ab.dtms";
    std::ostringstream out, err;
    REQUIRE(cmd_build_store(o, out, err) == 0);
    const EmbeddingStore ab = EmbeddingStore::open(o.out);
    REQUIRE(ab.size() == 3);
    CHECK(ab.header().normalized());
    CHECK(ab.entry(2).image_id == "b0");
    CHECK(ab.entry(2).index == 2);
    CHECK(ab.entry(2).source_path == "b0.png");
    CHECK(ab.entry(0).labels == std::vector<std::string>{"x"});
    const auto r = ab.record_view(2).values;
    CHECK(std::equal(r.begin(), r.end(), b[0].values().begin()));

    o.inputs = {dir / "a.dtms", dir / "c.dtms"};
    o.out = dir / "ac.dtms";
    std::ostringstream out2, err2;
    CHECK(cmd_build_store(o, out2, err2) != 0);
    CHECK(err2.str().find("shape") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "ac.dtms"));

    o.inputs = {dir / "a.dtms", dir / "a.dtms"};
    o.out = dir / "aa.dtms";
    std::ostringstream out3, err3;
    CHECK(cmd_build_store(o, out3, err3) != 0);

    BuildStoreOptions none;
    none.out = dir / "none.dtms";
    std::ostringstream out4, err4;
    CHECK(cmd_build_store(none, out4, err4) != 0);
}

TEST_CASE("search: own record first and output equals the library") {
    Built b(tiny_config());
    const auto qfiles = list_query_files(b.queries);
    REQUIRE(qfiles.size() == 4);
    const QueryFile q = read_query_file(qfiles[1]);

    SearchOptions o;
    o.store = b.store;
    o.query = qfiles[1];
    o.k = 10;
    o.out = b.dir / "res.jsonl";
    std::ostringstream out, err;
    REQUIRE(cmd_search(o, out, err) == 0);
    const auto res = read_results(o.out);
    REQUIRE(res.size() == 10);
    CHECK(res[0].index == *q.record.store_index);
    CHECK(std::fabs(res[0].score - 1.0) <= 1e-6);

    const EmbeddingStore s = EmbeddingStore::open(b.store);
    const FeatureMap map = load_query_map(q, s);
    const auto lib = search(s, project_roi(map, q.spec), {10, 1024, 1});
    CHECK(res == lib);
    std::string expect;
    for (const auto& r : lib) expect += format_result_line(r) + "\n";
    CHECK(slurp(o.out) == expect);

    o.k = 1000;
    o.out = b.dir / "all.jsonl";
    std::ostringstream out2, err2;
    REQUIRE(cmd_search(o, out2, err2) == 0);
    CHECK(read_results(o.out).size() == 100);
}

TEST_CASE("search: worker count does not change output bytes") {
    Built b(tiny_config(300));
    const auto q = list_query_files(b.queries).front();
    std::string first;
    for (unsigned workers : {1u, 2u, 8u}) {
        SearchOptions o;
        o.store = b.store;
        o.query = q;
        o.k = 50;
        o.workers = workers;
        o.shard_size = 17;
        o.out = b.dir / ("w" + std::to_string(workers) + ".jsonl");
        std::ostringstream out, err;
        REQUIRE(cmd_search(o, out, err) == 0);
        if (first.empty()) first = slurp(o.out);
        CHECK(slurp(o.out) == first);
    }
}

TEST_CASE("search: bad inputs exit nonzero") {
    Built b(tiny_config());
    SearchOptions o;
    o.store = b.store;
    o.query = b.dir / "missing.json";
    o.out = b.dir / "r.jsonl";
    std::ostringstream out, err;
    CHECK(cmd_search(o, out, err) != 0);
    CHECK_FALSE(err.str().empty());

    // query record from a store with other dims
    std::mt19937_64 rng(92);
    std::vector<FeatureMap> other{random_unit_map(rng, {3, 3, 16})};
    write_store(other, std::vector<ManifestEntry>{{0, "o", {}, {}}}, b.dir / "other.dtms");
    QueryFile q{{"o", 24, 24, {{0, 0, 8, 8, 0}}}, {{}, "other.dtms", 0}, {}};
    write_query_file(q, b.dir / "other_q.json");
    o.query = b.dir / "other_q.json";
    std::ostringstream out2, err2;
    CHECK(cmd_search(o, out2, err2) != 0);
}

TEST_CASE("heatmap: pixels are the linear mapping of the match map") {
    Built b(tiny_config());
    const auto qfile = list_query_files(b.queries).front();
    const QueryFile q = read_query_file(qfile);
    const EmbeddingStore s = EmbeddingStore::open(b.store);
    for (std::uint64_t rec : {*q.record.store_index, std::uint64_t{7}, std::uint64_t{42}}) {
        HeatmapOptions o{b.store, qfile, rec, b.dir / ("h" + std::to_string(rec) + ".pgm")};
        std::ostringstream out, err;
        REQUIRE(cmd_heatmap(o, out, err) == 0);
        const PgmImage img = read_pgm(o.out);
        CHECK(img.width == 6);
        CHECK(img.height == 5);
        const auto oracle = oracle_match_map(FeatureMap::from_view(s.record_view(rec)), load_query_map(q, s),
                                             project_roi_cells(6, 5, q.spec));
        const double lo = *std::min_element(oracle.begin(), oracle.end());
        const double hi = *std::max_element(oracle.begin(), oracle.end());
        for (std::size_t i = 0; i < oracle.size(); ++i) {
            const double want = (oracle[i] - lo) / (hi - lo) * 255.0;
            CHECK(std::fabs(double(img.pixels[i]) - want) <= 0.5 + 1e-3);
        }
        // raw values sidecar
        std::istringstream txt(slurp(o.out.string() + ".txt"));
        double v = 0;
        std::size_t n = 0;
        while (txt >> v) {
            CHECK(std::fabs(v - oracle[n]) <= 1e-6);
            ++n;
        }
        CHECK(n == 30);
    }

    HeatmapOptions bad{b.store, qfile, 100, b.dir / "bad.pgm"};
    std::ostringstream out, err;
    CHECK(cmd_heatmap(bad, out, err) != 0);
}

TEST_CASE("heatmap: exact copy is hottest at the block, orthogonal is flat zero") {
    TempDir dir("cli");
    const GridDims d{4, 4, 4};
    // query: ROI block at cells (1,1)-(2,1) holds e0 and e1; everything else e3
    std::vector<float> qv(d.values(), 0.0f), copy(d.values(), 0.0f), ortho(d.values(), 0.0f);
    for (std::size_t cell = 0; cell < 16; ++cell) {
        qv[cell * 4 + 3] = 1.0f;
        copy[cell * 4 + 3] = 1.0f;
        ortho[cell * 4 + 2] = 1.0f;
    }
    auto set = [&](std::vector<float>& v, std::size_t cell, int ch) {
        std::fill_n(v.begin() + cell * 4, 4, 0.0f);
        v[cell * 4 + ch] = 1.0f;
    };
    set(qv, 5, 0);
    set(qv, 6, 1);
    // sample copies the block to (2,3)-(3,3)
    set(copy, 14, 0);
    set(copy, 15, 1);
    std::vector<FeatureMap> recs{FeatureMap(d, qv, true), FeatureMap(d, copy, true), FeatureMap(d, ortho, true)};
    write_store(recs, std::vector<ManifestEntry>{{0, "q", {}, {}}, {1, "copy", {}, {}}, {2, "ortho", {}, {}}},
                dir / "s.dtms");
    write_query_file({{"q", 40, 40, {{10, 10, 30, 20, 0}}}, {0, {}, 0}, {}}, dir / "q.json");

    HeatmapOptions o{dir / "s.dtms", dir / "q.json", 1, dir / "copy.pgm"};
    std::ostringstream out, err;
    REQUIRE(cmd_heatmap(o, out, err) == 0);
    const PgmImage img = read_pgm(o.out);
    for (std::size_t i = 0; i < 16; ++i) CHECK(img.pixels[i] == ((i == 14 || i == 15) ? 255 : 0));

    o.record = 2;
    o.out = dir / "ortho.pgm";
    REQUIRE(cmd_heatmap(o, out, err) == 0);
    for (std::uint8_t p : read_pgm(o.out).pixels) CHECK(p == 0);
    std::istringstream txt(slurp(o.out.string() + ".txt"));
    double v = 1;
    while (txt >> v) CHECK(v == 0.0);
}

TEST_CASE("to_gray mapping") {
    ScoreMap m{3, 1, ScoreMapKind::Sample, {-1.0, 0.0, 1.0}};
    CHECK(to_gray(m) == std::vector<std::uint8_t>{0, 128, 255});
    ScoreMap flat{2, 1, ScoreMapKind::Sample, {0.5, 0.5}};
    CHECK(to_gray(flat) == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("eval: random only and self queries") {
    Built b(tiny_config(400), 5);
    EvalOptions o;
    o.store = b.store;
    o.queries_dir = b.queries;
    o.methods = "random";
    o.n = 400;
    o.out = b.dir / "report.jsonl";
    std::ostringstream out, err;
    REQUIRE(cmd_eval(o, out, err) == 0);
    CHECK(out.str().find("random hit-rate@400 = 0.1000") != std::string::npos);
    CHECK(fs::exists(b.dir / "report.jsonl.txt"));

    o.methods = "dtm";
    o.n = 1;
    std::ostringstream out2, err2;
    REQUIRE(cmd_eval(o, out2, err2) == 0);
    CHECK(out2.str().find("dtm hit-rate@1 = 1.0000") != std::string::npos);

    o.methods = "dtm,nope";
    std::ostringstream out3, err3;
    CHECK(cmd_eval(o, out3, err3) != 0);
}

TEST_CASE("eval: report equals the library experiment") {
    Built b(tiny_config(400), 5);
    EvalOptions o;
    o.store = b.store;
    o.queries_dir = b.queries;
    o.n = 20;
    o.seed = 3;
    o.out = b.dir / "report.jsonl";
    std::ostringstream out, err;
    REQUIRE(cmd_eval(o, out, err) == 0);

    const EmbeddingStore s = EmbeddingStore::open(b.store);
    const auto files = list_query_files(b.queries);
    const auto queries = load_eval_queries(files, s);
    ExperimentConfig cfg;
    cfg.n = 20;
    cfg.seed = 3;
    const EvalReport r = run_experiment(s, queries, cfg);
    CHECK(slurp(o.out) == format_report_jsonl(r));
    CHECK(slurp(o.out.string() + ".txt") == format_report_table(r));
}

TEST_CASE("gallery: panels in rank order, empty page, heatmap links") {
    Built b(tiny_config());
    const auto qfile = list_query_files(b.queries).front();
    SearchOptions so;
    so.store = b.store;
    so.query = qfile;
    so.k = 10;
    so.out = b.dir / "res.jsonl";
    so.heatmap_dir = b.dir / "heat";
    std::ostringstream out, err;
    REQUIRE(cmd_search(so, out, err) == 0);

    GalleryOptions g;
    g.results = so.out;
    g.manifest = b.store;
    g.out = b.dir / "page.html";
    g.heatmap_dir = b.dir / "heat";
    REQUIRE(cmd_gallery(g, out, err) == 0);
    const std::string html = slurp(g.out);
    const std::regex panel("data-rank=\"(\\d+)\"");
    std::vector<int> ranks;
    for (auto it = std::sregex_iterator(html.begin(), html.end(), panel); it != std::sregex_iterator(); ++it)
        ranks.push_back(std::stoi((*it)[1]));
    CHECK(ranks == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    // every linked heatmap exists on disk relative to the page
    const std::regex link("class=\"heatmap\" href=\"([^\"]+)\"");
    std::size_t links = 0;
    for (auto it = std::sregex_iterator(html.begin(), html.end(), link); it != std::sregex_iterator(); ++it) {
        CHECK(fs::exists(b.dir / (*it)[1].str()));
        ++links;
    }
    CHECK(links == 10);

    // no heatmap dir, no links
    g.heatmap_dir.reset();
    g.out = b.dir / "plain.html";
    REQUIRE(cmd_gallery(g, out, err) == 0);
    CHECK(slurp(g.out).find("class=\"heatmap\"") == std::string::npos);

    // empty results still give a complete page
    std::ofstream(b.dir / "empty.jsonl").close();
    g.results = b.dir / "empty.jsonl";
    g.out = b.dir / "empty.html";
    REQUIRE(cmd_gallery(g, out, err) == 0);
    const std::string empty = slurp(g.out);
    CHECK(empty.find("data-rank") == std::string::npos);
    CHECK(empty.find("</html>") != std::string::npos);

    g.results = b.dir / "missing.jsonl";
    CHECK(cmd_gallery(g, out, err) != 0);
}

TEST_CASE("inspect reports the header and catches bad files") {
    Built b(tiny_config());
    InspectOptions o{b.store, true};
    std::ostringstream out, err;
    REQUIRE(cmd_inspect(o, out, err) == 0);
    CHECK(out.str().find("6x5x16") != std::string::npos);
    CHECK(out.str().find("normalization check passed") != std::string::npos);
    std::ofstream(b.dir / "junk.dtms") << "XXXX this is not a store at all";
    std::ofstream(b.dir / "junk.dtms.manifest").close();
    InspectOptions junk{b.dir / "junk.dtms", false};
    CHECK(cmd_inspect(junk, out, err) != 0);
}

TEST_CASE("dtm executable: flags and exit codes") {
    Built b(tiny_config());
    const auto q = list_query_files(b.queries).front();
    const std::string store = b.store.string();
    CHECK(run_tool("--kernel-info inspect --store " + store) == 0);
    CHECK(run_tool("search --store " + store + " --query " + q.string() + " --k 5 --workers 2 --out " +
                   (b.dir / "r.jsonl").string()) == 0);
    CHECK(read_results(b.dir / "r.jsonl").size() == 5);
    CHECK(run_tool("gallery --results " + (b.dir / "r.jsonl").string() + " --manifest " + store + " --out " +
                   (b.dir / "g.html").string()) == 0);
    CHECK(run_tool("heatmap --store " + store + " --query " + q.string() + " --record 3 --out " +
                   (b.dir / "h.pgm").string()) == 0);
    CHECK(run_tool("heatmap --store " + store + " --query " + q.string() + " --record 100 --out " +
                   (b.dir / "h2.pgm").string()) != 0);
    CHECK(run_tool("eval --store " + store + " --queries " + b.queries.string() + " --methods random --n 10 --out " +
                   (b.dir / "e.jsonl").string()) == 0);
    CHECK(run_tool("search --store " + store) != 0);
    CHECK(run_tool("") != 0);
}

}  // TEST_SUITE
