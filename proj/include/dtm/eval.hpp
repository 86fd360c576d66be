#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dtm/featmap.hpp"
#include "dtm/query_io.hpp"
#include "dtm/search.hpp"
#include "dtm/store.hpp"

namespace dtm {

// ---------------------------------------------------------------------------
// Synthetic data

/// One object class planted into positive records. A planted cell is
/// normalize(amplitude * s + noise_sigma * n), where s is the record's jittered
/// copy of the class direction and n the unit noise cell it replaces.
struct ClassSpec {
    std::string name;
    std::uint32_t min_cells = 1;
    std::uint32_t max_cells = 2;
    std::uint64_t direction_seed = 0;
    double amplitude = 3.0;
    double positive_fraction = 0.1;
    /// Norm of the random perturbation added to the unit class direction per instance.
    double jitter = 0.25;
};

struct SynthConfig {
    GridDims dims{16, 16, 64};
    std::uint64_t record_count = 20000;
    std::vector<ClassSpec> classes;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;
    /// Pixels per feature cell in the synthetic query images.
    std::uint32_t cell_pixels = 16;
};

/// N=20,000 records of 16x16x64, "motorcycle" (10%, 1-2 cells) as the target
/// class plus a larger "car" distractor class.
SynthConfig default_synth_config();

/// Throws Config on infeasible settings.
void validate(const SynthConfig& config);

SynthConfig parse_synth_config(const std::string& json_text);
SynthConfig read_synth_config(const std::filesystem::path& path);
std::string format_synth_config(const SynthConfig& config);

struct PlantedObject {
    std::uint64_t record = 0;
    std::uint32_t class_index = 0;
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
};

struct SynthDataset {
    WriteSummary summary;
    std::vector<ManifestEntry> manifest;
    std::vector<PlantedObject> objects;
    /// fnv1a64 over the record payload, in write order.
    std::uint64_t payload_checksum = 0;
};

/// Deterministic in (config, seed); `workers` only changes speed.
SynthDataset generate_synthetic(const SynthConfig& config, const std::filesystem::path& path, unsigned workers = 1);

/// In-memory records [begin, end) of the same dataset, for tests and tools.
std::vector<FeatureMap> synthesize_records(const SynthConfig& config, std::uint64_t begin, std::uint64_t end,
                                           std::vector<PlantedObject>* objects = nullptr);

/// Fraction of `draws` trials in which a freshly planted cell of class
/// `class_index` is closer (cosine) to the class direction than every one of
/// w*h unit noise cells. Used to calibrate the default amplitude.
double measure_planted_dominance(const SynthConfig& config, std::size_t class_index, std::size_t draws,
                                 std::uint64_t seed);

/// `count` positive records of `target_class` as single-ROI queries over their
/// planted block, picked deterministically under `seed`.
std::vector<QueryFile> make_synthetic_queries(const SynthConfig& config, const SynthDataset& dataset,
                                              const std::string& target_class, std::size_t count,
                                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics

class LabelIndex {
public:
    explicit LabelIndex(std::span<const ManifestEntry> manifest);
    /// Throws Data for an unknown image id.
    bool has_label(const std::string& image_id, std::string_view label) const;
    double positive_fraction(std::string_view label) const;

private:
    std::unordered_map<std::string, const ManifestEntry*> by_id_;
};

/// Hits among the top n over n (over the result count when fewer than n).
double hit_rate_at_n(std::span<const RetrievalResult> results, const LabelIndex& labels,
                     std::string_view target_class, std::size_t n);

std::vector<double> default_bin_edges();

/// Percent of the image covered by the query's ROIs (summed, capped at 100).
double roi_area_percent(const QuerySpec& query);

/// Half-open bins [edge_i, edge_i+1); the last bin also holds its upper edge.
std::vector<std::size_t> bin_queries_by_roi_area(std::span<const QuerySpec> queries, std::span<const double> edges);

// ---------------------------------------------------------------------------
// Experiments

enum class Method { Dtm, Gap, Random };

std::string_view to_string(Method method) noexcept;
Method parse_method(std::string_view name);
std::vector<Method> parse_methods(std::string_view comma_separated);

struct EvalQuery {
    QuerySpec spec;
    FeatureMap map;
    std::string target_class;
};

/// Resolves query files against a store.
std::vector<EvalQuery> load_eval_queries(std::span<const std::filesystem::path> files, const EmbeddingStore& store,
                                         const std::string& default_target = {});

struct ExperimentConfig {
    std::vector<Method> methods{Method::Dtm, Method::Gap, Method::Random};
    std::size_t n = 100;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::vector<double> bin_edges = default_bin_edges();
};

struct QueryOutcome {
    std::string query_id;
    std::string target_class;
    double roi_area_percent = 0.0;
    std::size_t bin = 0;
    std::vector<double> hit_rates;  // per method, config order
};

struct MethodSummary {
    Method method = Method::Dtm;
    double hit_rate = 0.0;
    std::vector<std::optional<double>> bin_rates;  // empty bins have no rate
};

struct EvalReport {
    std::string store_path;
    std::uint64_t record_count = 0;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::vector<double> bin_edges;
    std::vector<std::size_t> bin_counts;
    double random_baseline_rate = 0.0;
    std::vector<MethodSummary> methods;
    std::vector<QueryOutcome> queries;

    const MethodSummary& summary(Method method) const;
};

EvalReport run_experiment(const EmbeddingStore& store, std::span<const EvalQuery> queries,
                          const ExperimentConfig& config);

/// Line-delimited JSON: one "meta", one "query" per query, one "summary" per method.
std::string format_report_jsonl(const EvalReport& report);
std::string format_report_table(const EvalReport& report);

}  // namespace dtm
