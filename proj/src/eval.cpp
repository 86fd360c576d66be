#include "dtm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "dtm/baseline.hpp"
#include "dtm/error.hpp"
#include "dtm/scoring.hpp"
#include "json.hpp"
#include "parallel.hpp"

namespace dtm {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(tag ^ splitmix64(index))));
}

// Distributions are written out so streams are identical across standard libraries.
double unit_real(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) { return rng() % bound; }

void fill_normal(std::mt19937_64& rng, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); i += 2) {
        const double u1 = 1.0 - unit_real(rng);
        const double u2 = unit_real(rng);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        out[i] = r * std::cos(theta);
        if (i + 1 < out.size()) out[i + 1] = r * std::sin(theta);
    }
}

void normalize(std::span<double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (sq == 0.0) return;
    const double norm = std::sqrt(sq);
    for (double& x : v) x /= norm;
}

std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
    std::vector<double> v(dim);
    fill_normal(rng, v);
    normalize(v);
    return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

constexpr std::uint64_t kTagDirection = 0xD1;
constexpr std::uint64_t kTagMembership = 0x3E;
constexpr std::uint64_t kTagRecord = 0x5C;
constexpr std::uint64_t kTagQueries = 0x9A;
constexpr std::uint64_t kTagRandomRank = 0x7F;

std::vector<std::pair<std::uint32_t, std::uint32_t>> block_shapes(std::uint32_t cells, const GridDims& dims) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
    for (std::uint32_t w = 1; w <= cells; ++w) {
        if (cells % w != 0) continue;
        const std::uint32_t h = cells / w;
        if (w <= dims.width && h <= dims.height) shapes.emplace_back(w, h);
    }
    return shapes;
}

std::vector<double> class_direction(const ClassSpec& spec, std::size_t channels) {
    auto rng = stream(spec.direction_seed, kTagDirection, 0);
    return random_unit(rng, channels);
}

// Planted cell: normalize(amplitude * signature + sigma * noise).
std::vector<double> planted_cell(const ClassSpec& spec, double sigma, std::span<const double> signature,
                                 std::span<const double> noise) {
    std::vector<double> v(signature.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = spec.amplitude * signature[i] + sigma * noise[i];
    normalize(v);
    return v;
}

std::vector<double> instance_signature(std::mt19937_64& rng, const ClassSpec& spec, std::span<const double> direction) {
    const auto perturb = random_unit(rng, direction.size());
    std::vector<double> s(direction.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = direction[i] + spec.jitter * perturb[i];
    normalize(s);
    return s;
}

struct SynthPlan {
    SynthConfig config;
    std::vector<std::vector<double>> directions;
    std::vector<std::vector<std::uint32_t>> record_classes;
};

SynthPlan make_plan(const SynthConfig& config) {
    validate(config);
    SynthPlan plan{config, {}, std::vector<std::vector<std::uint32_t>>(config.record_count)};
    for (std::size_t k = 0; k < config.classes.size(); ++k) {
        const ClassSpec& spec = config.classes[k];
        plan.directions.push_back(class_direction(spec, config.dims.channels));
        const auto count = static_cast<std::uint64_t>(std::llround(spec.positive_fraction * config.record_count));
        std::vector<std::uint64_t> order(config.record_count);
        for (std::uint64_t i = 0; i < order.size(); ++i) order[i] = i;
        auto rng = stream(config.seed, kTagMembership, k);
        for (std::uint64_t i = 0; i < count; ++i) {
            std::swap(order[i], order[i + uniform_below(rng, order.size() - i)]);
            plan.record_classes[order[i]].push_back(static_cast<std::uint32_t>(k));
        }
    }
    for (auto& classes : plan.record_classes) std::sort(classes.begin(), classes.end());
    return plan;
}

FeatureMap synthesize(const SynthPlan& plan, std::uint64_t index, std::vector<PlantedObject>* objects) {
    const SynthConfig& cfg = plan.config;
    const GridDims dims = cfg.dims;
    const std::size_t c = dims.channels;
    auto rng = stream(cfg.seed, kTagRecord, index);

    std::vector<double> cells(dims.values());
    for (std::size_t cell = 0; cell < dims.cells(); ++cell) {
        std::span<double> v(cells.data() + cell * c, c);
        fill_normal(rng, v);
        normalize(v);
    }

    std::vector<bool> taken(dims.cells(), false);
    for (std::uint32_t k : plan.record_classes[index]) {
        const ClassSpec& spec = cfg.classes[k];
        const auto n_cells = static_cast<std::uint32_t>(spec.min_cells +
                                                        uniform_below(rng, spec.max_cells - spec.min_cells + 1));
        const auto shapes = block_shapes(n_cells, dims);
        const auto [bw, bh] = shapes[uniform_below(rng, shapes.size())];
        std::uint32_t bx = 0;
        std::uint32_t by = 0;
        bool placed = false;
        for (int attempt = 0; attempt < 256 && !placed; ++attempt) {
            bx = static_cast<std::uint32_t>(uniform_below(rng, dims.width - bw + 1));
            by = static_cast<std::uint32_t>(uniform_below(rng, dims.height - bh + 1));
            placed = true;
            for (std::uint32_t y = by; y < by + bh && placed; ++y) {
                for (std::uint32_t x = bx; x < bx + bw; ++x) {
                    if (taken[std::size_t{y} * dims.width + x]) {
                        placed = false;
                        break;
                    }
                }
            }
        }
        if (!placed) {
            fail(ErrorKind::Config, "cannot place disjoint objects in record " + std::to_string(index) +
                                        "; grid too small for the configured classes");
        }
        const auto signature = instance_signature(rng, spec, plan.directions[k]);
        for (std::uint32_t y = by; y < by + bh; ++y) {
            for (std::uint32_t x = bx; x < bx + bw; ++x) {
                const std::size_t cell = std::size_t{y} * dims.width + x;
                taken[cell] = true;
                std::span<double> v(cells.data() + cell * c, c);
                const auto planted = planted_cell(spec, cfg.noise_sigma, signature, v);
                std::copy(planted.begin(), planted.end(), v.begin());
            }
        }
        if (objects != nullptr) objects->push_back({index, k, bx, by, bw, bh});
    }

    std::vector<float> values(cells.begin(), cells.end());
    return FeatureMap(dims, std::move(values), true);
}

ManifestEntry synth_entry(const SynthPlan& plan, std::uint64_t index) {
    ManifestEntry e;
    e.index = index;
    std::ostringstream id;
    id << "synth_" << std::setw(6) << std::setfill('0') << index;
    e.image_id = id.str();
    for (std::uint32_t k : plan.record_classes[index]) e.labels.push_back(plan.config.classes[k].name);
    return e;
}

}  // namespace

SynthConfig default_synth_config() {
    SynthConfig cfg;
    cfg.dims = {16, 16, 64};
    cfg.record_count = 20000;
    cfg.noise_sigma = 1.0;
    cfg.seed = 20210601;
    cfg.cell_pixels = 16;
    cfg.classes = {
        ClassSpec{"motorcycle", 1, 2, 101, 3.0, 0.10, 0.25},
        ClassSpec{"car", 2, 6, 202, 3.0, 0.30, 0.25},
    };
    return cfg;
}

void validate(const SynthConfig& config) {
    if (!config.dims.valid()) fail(ErrorKind::Config, "synthetic dims must be >= 1");
    if (config.record_count < 1) fail(ErrorKind::Config, "record_count must be >= 1");
    if (!(config.noise_sigma > 0.0)) fail(ErrorKind::Config, "noise_sigma must be > 0");
    if (config.cell_pixels < 1) fail(ErrorKind::Config, "cell_pixels must be >= 1");
    for (std::size_t k = 0; k < config.classes.size(); ++k) {
        const ClassSpec& spec = config.classes[k];
        const std::string who = "class '" + spec.name + "'";
        if (spec.name.empty()) fail(ErrorKind::Config, "class names must be non-empty");
        for (std::size_t j = 0; j < k; ++j) {
            if (config.classes[j].name == spec.name) fail(ErrorKind::Config, "duplicate " + who);
        }
        if (!(spec.positive_fraction > 0.0 && spec.positive_fraction < 1.0)) {
            fail(ErrorKind::Config, who + ": positive_fraction must lie in (0, 1)");
        }
        if (spec.min_cells < 1 || spec.min_cells > spec.max_cells || spec.max_cells > config.dims.cells()) {
            fail(ErrorKind::Config, who + ": cell count range must lie within [1, " +
                                        std::to_string(config.dims.cells()) + "]");
        }
        for (std::uint32_t n = spec.min_cells; n <= spec.max_cells; ++n) {
            if (block_shapes(n, config.dims).empty()) {
                fail(ErrorKind::Config, who + ": no rectangular block of " + std::to_string(n) + " cells fits the grid");
            }
        }
        if (!(spec.amplitude >= 0.0) || !(spec.jitter >= 0.0)) {
            fail(ErrorKind::Config, who + ": amplitude and jitter must be >= 0");
        }
    }
}

SynthConfig parse_synth_config(const std::string& json_text) {
    SynthConfig cfg;
    cfg.classes.clear();
    try {
        const auto j = nlohmann::json::parse(json_text);
        cfg.dims = {j.at("width").get<std::uint32_t>(), j.at("height").get<std::uint32_t>(),
                    j.at("channels").get<std::uint32_t>()};
        cfg.record_count = j.at("record_count").get<std::uint64_t>();
        cfg.noise_sigma = j.value("noise_sigma", 1.0);
        cfg.seed = j.value("seed", std::uint64_t{0});
        cfg.cell_pixels = j.value("cell_pixels", std::uint32_t{16});
        for (const auto& c : j.at("classes")) {
            ClassSpec spec;
            spec.name = c.at("name").get<std::string>();
            spec.min_cells = c.at("min_cells").get<std::uint32_t>();
            spec.max_cells = c.at("max_cells").get<std::uint32_t>();
            spec.direction_seed = c.at("direction_seed").get<std::uint64_t>();
            spec.amplitude = c.value("amplitude", spec.amplitude);
            spec.positive_fraction = c.at("positive_fraction").get<double>();
            spec.jitter = c.value("jitter", spec.jitter);
            cfg.classes.push_back(std::move(spec));
        }
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::Config, std::string("malformed synthetic config: ") + ex.what());
    }
    validate(cfg);
    return cfg;
}

SynthConfig read_synth_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_synth_config(buffer.str());
}

std::string format_synth_config(const SynthConfig& config) {
    nlohmann::ordered_json j;
    j["width"] = config.dims.width;
    j["height"] = config.dims.height;
    j["channels"] = config.dims.channels;
    j["record_count"] = config.record_count;
    j["noise_sigma"] = config.noise_sigma;
    j["seed"] = config.seed;
    j["cell_pixels"] = config.cell_pixels;
    auto classes = nlohmann::ordered_json::array();
    for (const ClassSpec& c : config.classes) {
        nlohmann::ordered_json cj;
        cj["name"] = c.name;
        cj["min_cells"] = c.min_cells;
        cj["max_cells"] = c.max_cells;
        cj["direction_seed"] = c.direction_seed;
        cj["amplitude"] = c.amplitude;
        cj["positive_fraction"] = c.positive_fraction;
        cj["jitter"] = c.jitter;
        classes.push_back(cj);
    }
    j["classes"] = classes;
    return j.dump(2);
}

SynthDataset generate_synthetic(const SynthConfig& config, const std::filesystem::path& path, unsigned workers) {
    const SynthPlan plan = make_plan(config);
    SynthDataset out;
    StoreWriter writer(path, config.dims, true);
    std::uint64_t checksum = 0xcbf29ce484222325ULL;

    // Records are generated a batch at a time (in parallel) and written in order.
    constexpr std::uint64_t kBatch = 512;
    for (std::uint64_t begin = 0; begin < config.record_count; begin += kBatch) {
        const std::uint64_t end = std::min(config.record_count, begin + kBatch);
        std::vector<FeatureMap> records(end - begin);
        std::vector<std::vector<PlantedObject>> objects(end - begin);
        detail::parallel_chunks(records.size(), workers, [&](std::size_t i) {
            records[i] = synthesize(plan, begin + i, &objects[i]);
        });
        for (std::uint64_t i = 0; i < records.size(); ++i) {
            ManifestEntry entry = synth_entry(plan, begin + i);
            const auto values = records[i].values();
            checksum = fnv1a64(std::as_bytes(values), checksum);
            writer.append(records[i], entry);
            out.manifest.push_back(std::move(entry));
            out.objects.insert(out.objects.end(), objects[i].begin(), objects[i].end());
        }
    }
    out.summary = writer.finish();
    out.payload_checksum = checksum;
    return out;
}

std::vector<FeatureMap> synthesize_records(const SynthConfig& config, std::uint64_t begin, std::uint64_t end,
                                           std::vector<PlantedObject>* objects) {
    const SynthPlan plan = make_plan(config);
    if (begin > end || end > config.record_count) fail(ErrorKind::InvalidInput, "record range outside the dataset");
    std::vector<FeatureMap> records;
    records.reserve(end - begin);
    for (std::uint64_t i = begin; i < end; ++i) records.push_back(synthesize(plan, i, objects));
    return records;
}

double measure_planted_dominance(const SynthConfig& config, std::size_t class_index, std::size_t draws,
                                 std::uint64_t seed) {
    validate(config);
    if (class_index >= config.classes.size()) fail(ErrorKind::InvalidInput, "class index out of range");
    const ClassSpec& spec = config.classes[class_index];
    const std::size_t c = config.dims.channels;
    const auto direction = class_direction(spec, c);
    std::size_t wins = 0;
    for (std::size_t draw = 0; draw < draws; ++draw) {
        auto rng = stream(seed, 0xCA11B, draw);
        double best_noise = -1.0;
        for (std::size_t cell = 0; cell < config.dims.cells(); ++cell) {
            best_noise = std::max(best_noise, dot(random_unit(rng, c), direction));
        }
        const auto noise = random_unit(rng, c);
        const auto signature = instance_signature(rng, spec, direction);
        const auto planted = planted_cell(spec, config.noise_sigma, signature, noise);
        if (dot(planted, direction) > best_noise) ++wins;
    }
    return draws == 0 ? 0.0 : static_cast<double>(wins) / static_cast<double>(draws);
}

std::vector<QueryFile> make_synthetic_queries(const SynthConfig& config, const SynthDataset& dataset,
                                              const std::string& target_class, std::size_t count,
                                              std::uint64_t seed) {
    const auto it = std::find_if(config.classes.begin(), config.classes.end(),
                                 [&](const ClassSpec& c) { return c.name == target_class; });
    if (it == config.classes.end()) fail(ErrorKind::Config, "unknown target class '" + target_class + "'");
    const auto class_index = static_cast<std::uint32_t>(it - config.classes.begin());
    std::vector<const PlantedObject*> candidates;
    for (const PlantedObject& o : dataset.objects) {
        if (o.class_index == class_index) candidates.push_back(&o);
    }
    if (candidates.size() < count) {
        fail(ErrorKind::Config, "only " + std::to_string(candidates.size()) + " positives for '" + target_class + "'");
    }
    auto rng = stream(seed, kTagQueries, class_index);
    for (std::size_t i = 0; i < count; ++i) std::swap(candidates[i], candidates[i + uniform_below(rng, candidates.size() - i)]);

    const std::uint32_t px = config.cell_pixels;
    std::vector<QueryFile> queries;
    for (std::size_t i = 0; i < count; ++i) {
        const PlantedObject& o = *candidates[i];
        QueryFile q;
        q.spec.image_id = dataset.manifest.at(o.record).image_id;
        q.spec.image_width = config.dims.width * px;
        q.spec.image_height = config.dims.height * px;
        q.spec.rois.push_back({o.x * px, o.y * px, (o.x + o.width) * px, (o.y + o.height) * px, 0});
        q.record.store_index = o.record;
        q.target_class = target_class;
        queries.push_back(std::move(q));
    }
    return queries;
}

LabelIndex::LabelIndex(std::span<const ManifestEntry> manifest) {
    by_id_.reserve(manifest.size());
    for (const ManifestEntry& e : manifest) by_id_.emplace(e.image_id, &e);
}

bool LabelIndex::has_label(const std::string& image_id, std::string_view label) const {
    const auto it = by_id_.find(image_id);
    if (it == by_id_.end()) fail(ErrorKind::Data, "image id '" + image_id + "' is not in the manifest");
    return it->second->has_label(label);
}

double LabelIndex::positive_fraction(std::string_view label) const {
    if (by_id_.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& [id, entry] : by_id_) hits += entry->has_label(label) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(by_id_.size());
}

double hit_rate_at_n(std::span<const RetrievalResult> results, const LabelIndex& labels,
                     std::string_view target_class, std::size_t n) {
    if (n < 1) fail(ErrorKind::InvalidInput, "n must be >= 1");
    const std::size_t considered = std::min(n, results.size());
    if (considered == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < considered; ++i) hits += labels.has_label(results[i].image_id, target_class) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(considered);
}

std::vector<double> default_bin_edges() { return {0.0, 1.0, 2.0, 5.0, 10.0, 100.0}; }

double roi_area_percent(const QuerySpec& query) {
    validate(query);
    std::uint64_t area = 0;
    for (const RoiBox& roi : query.rois) area += roi.area();
    const double image = static_cast<double>(query.image_width) * query.image_height;
    return std::min(100.0, 100.0 * static_cast<double>(area) / image);
}

std::vector<std::size_t> bin_queries_by_roi_area(std::span<const QuerySpec> queries, std::span<const double> edges) {
    if (edges.size() < 2 || edges.front() != 0.0) fail(ErrorKind::Config, "bin edges must start at 0 and name >= 1 bin");
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) fail(ErrorKind::Config, "bin edges must be strictly increasing");
    }
    std::vector<std::size_t> bins;
    bins.reserve(queries.size());
    for (const QuerySpec& q : queries) {
        validate(q);
        std::uint64_t area = 0;
        for (const RoiBox& roi : q.rois) area += roi.area();
        const double image = static_cast<double>(q.image_width) * q.image_height;
        // Compare 100 * area against edge * image so exact percentages land on the right side.
        const double scaled = std::min(100.0 * static_cast<double>(area), 100.0 * image);
        std::size_t bin = edges.size() - 2;
        for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
            if (scaled < edges[b + 1] * image) {
                bin = b;
                break;
            }
        }
        if (scaled > edges.back() * image) fail(ErrorKind::Config, "ROI area exceeds the last bin edge");
        bins.push_back(bin);
    }
    return bins;
}

std::string_view to_string(Method method) noexcept {
    switch (method) {
        case Method::Dtm: return "dtm";
        case Method::Gap: return "gap";
        case Method::Random: return "random";
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    if (name == "dtm") return Method::Dtm;
    if (name == "gap") return Method::Gap;
    if (name == "random") return Method::Random;
    fail(ErrorKind::Config, "unknown method '" + std::string(name) + "' (expected dtm, gap or random)");
}

std::vector<Method> parse_methods(std::string_view comma_separated) {
    std::vector<Method> methods;
    std::size_t start = 0;
    while (start <= comma_separated.size()) {
        const std::size_t end = std::min(comma_separated.find(',', start), comma_separated.size());
        const auto name = comma_separated.substr(start, end - start);
        if (!name.empty()) {
            const Method m = parse_method(name);
            if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
        }
        start = end + 1;
    }
    if (methods.empty()) fail(ErrorKind::Config, "no methods given");
    return methods;
}

std::vector<EvalQuery> load_eval_queries(std::span<const std::filesystem::path> files, const EmbeddingStore& store,
                                         const std::string& default_target) {
    std::vector<EvalQuery> queries;
    for (const auto& file : files) {
        const QueryFile q = read_query_file(file);
        std::string target = q.target_class.value_or(default_target);
        if (target.empty()) fail(ErrorKind::Config, file.string() + ": no target_class and no default given");
        queries.push_back({q.spec, load_query_map(q, store, file.parent_path()), std::move(target)});
    }
    return queries;
}

const MethodSummary& EvalReport::summary(Method method) const {
    for (const MethodSummary& m : methods) {
        if (m.method == method) return m;
    }
    fail(ErrorKind::Config, "method '" + std::string(to_string(method)) + "' was not run");
}

EvalReport run_experiment(const EmbeddingStore& store, std::span<const EvalQuery> queries,
                          const ExperimentConfig& config) {
    if (config.n < 1) fail(ErrorKind::Config, "n must be >= 1");
    if (config.methods.empty()) fail(ErrorKind::Config, "no methods given");

    EvalReport report;
    report.store_path = store.path().string();
    report.record_count = store.size();
    report.n = config.n;
    report.seed = config.seed;
    report.bin_edges = config.bin_edges;

    std::vector<QuerySpec> specs;
    for (const EvalQuery& q : queries) specs.push_back(q.spec);
    const auto bins = bin_queries_by_roi_area(specs, config.bin_edges);
    const std::size_t bin_count = config.bin_edges.size() - 1;
    report.bin_counts.assign(bin_count, 0);
    for (std::size_t b : bins) ++report.bin_counts[b];

    const LabelIndex labels(store.manifest());
    const SearchConfig search_cfg{config.n, 1024, config.workers};

    // rankings[method][query]
    std::vector<std::vector<std::vector<RetrievalResult>>> rankings;
    for (Method method : config.methods) {
        std::vector<std::vector<RetrievalResult>> per_query;
        switch (method) {
            case Method::Dtm: {
                std::vector<Template> templates;
                templates.reserve(queries.size());
                for (const EvalQuery& q : queries) templates.push_back(project_roi(q.map, q.spec));
                per_query = search_multi(store, templates, search_cfg);
                break;
            }
            case Method::Gap: {
                const GapIndex index = GapIndex::build(store, config.workers);
                for (const EvalQuery& q : queries) per_query.push_back(index.search(store, gap_descriptor(q.map), search_cfg));
                break;
            }
            case Method::Random: {
                for (std::size_t qi = 0; qi < queries.size(); ++qi) {
                    auto rng = stream(config.seed, kTagRandomRank, qi);
                    std::vector<std::uint64_t> order(store.size());
                    for (std::uint64_t i = 0; i < order.size(); ++i) order[i] = i;
                    const std::size_t take = std::min<std::size_t>(config.n, order.size());
                    std::vector<RetrievalResult> results;
                    for (std::size_t i = 0; i < take; ++i) {
                        std::swap(order[i], order[i + uniform_below(rng, order.size() - i)]);
                        results.push_back({static_cast<std::uint32_t>(i + 1), order[i], store.entry(order[i]).image_id, 0.0});
                    }
                    per_query.push_back(std::move(results));
                }
                break;
            }
        }
        rankings.push_back(std::move(per_query));
    }

    double baseline_sum = 0.0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        QueryOutcome outcome{queries[qi].spec.image_id, queries[qi].target_class, roi_area_percent(queries[qi].spec),
                             bins[qi], {}};
        for (std::size_t m = 0; m < config.methods.size(); ++m) {
            outcome.hit_rates.push_back(hit_rate_at_n(rankings[m][qi], labels, queries[qi].target_class, config.n));
        }
        baseline_sum += labels.positive_fraction(queries[qi].target_class);
        report.queries.push_back(std::move(outcome));
    }
    report.random_baseline_rate = queries.empty() ? 0.0 : baseline_sum / static_cast<double>(queries.size());

    for (std::size_t m = 0; m < config.methods.size(); ++m) {
        MethodSummary summary{config.methods[m], 0.0, std::vector<std::optional<double>>(bin_count)};
        std::vector<double> bin_sums(bin_count, 0.0);
        double total = 0.0;
        for (const QueryOutcome& q : report.queries) {
            total += q.hit_rates[m];
            bin_sums[q.bin] += q.hit_rates[m];
        }
        summary.hit_rate = queries.empty() ? 0.0 : total / static_cast<double>(queries.size());
        for (std::size_t b = 0; b < bin_count; ++b) {
            if (report.bin_counts[b] > 0) summary.bin_rates[b] = bin_sums[b] / static_cast<double>(report.bin_counts[b]);
        }
        report.methods.push_back(std::move(summary));
    }
    return report;
}

std::string format_report_jsonl(const EvalReport& report) {
    std::ostringstream out;
    nlohmann::ordered_json meta;
    meta["type"] = "meta";
    meta["store"] = report.store_path;
    meta["record_count"] = report.record_count;
    meta["n"] = report.n;
    meta["seed"] = report.seed;
    meta["bin_edges"] = report.bin_edges;
    meta["bin_counts"] = report.bin_counts;
    meta["random_baseline_rate"] = report.random_baseline_rate;
    std::vector<std::string> names;
    for (const MethodSummary& m : report.methods) names.emplace_back(to_string(m.method));
    meta["methods"] = names;
    out << meta.dump() << '\n';
    for (const QueryOutcome& q : report.queries) {
        nlohmann::ordered_json j;
        j["type"] = "query";
        j["query_id"] = q.query_id;
        j["target_class"] = q.target_class;
        j["roi_area_percent"] = q.roi_area_percent;
        j["bin"] = q.bin;
        nlohmann::ordered_json rates;
        for (std::size_t m = 0; m < names.size(); ++m) rates[names[m]] = q.hit_rates[m];
        j["hit_rate"] = rates;
        out << j.dump() << '\n';
    }
    for (const MethodSummary& m : report.methods) {
        nlohmann::ordered_json j;
        j["type"] = "summary";
        j["method"] = to_string(m.method);
        j["hit_rate"] = m.hit_rate;
        auto bins = nlohmann::ordered_json::array();
        for (const auto& rate : m.bin_rates) bins.push_back(rate ? nlohmann::ordered_json(*rate) : nlohmann::ordered_json());
        j["bin_hit_rate"] = bins;
        out << j.dump() << '\n';
    }
    return out.str();
}

std::string format_report_table(const EvalReport& report) {
    std::ostringstream out;
    out << "hit-rate@" << report.n << " over " << report.queries.size() << " queries, " << report.record_count
        << " records (random baseline " << std::fixed << std::setprecision(4) << report.random_baseline_rate << ")\n";
    out << std::left << std::setw(10) << "method" << std::right << std::setw(10) << "all";
    for (std::size_t b = 0; b + 1 < report.bin_edges.size(); ++b) {
        std::ostringstream label;
        label << std::defaultfloat << "[" << report.bin_edges[b] << "," << report.bin_edges[b + 1] << ")%";
        out << std::setw(14) << label.str();
    }
    out << '\n' << std::left << std::setw(10) << "queries" << std::right << std::setw(10) << report.queries.size();
    for (std::size_t count : report.bin_counts) out << std::setw(14) << count;
    out << '\n';
    for (const MethodSummary& m : report.methods) {
        out << std::left << std::setw(10) << to_string(m.method) << std::right << std::setw(10) << m.hit_rate;
        for (const auto& rate : m.bin_rates) {
            if (rate) {
                out << std::setw(14) << *rate;
            } else {
                out << std::setw(14) << "-";
            }
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace dtm
