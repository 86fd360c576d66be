#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "dtm/error.hpp"
#include "dtm/eval.hpp"
#include "dtm/featmap.hpp"
#include "dtm/query_io.hpp"

namespace dtm::cli {
namespace {

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
    }
    return 1;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

Template query_template(const QueryFile& query, const EmbeddingStore& store, const std::filesystem::path& query_path) {
    const FeatureMap map = load_query_map(query, store, query_path.parent_path());
    if (!(map.dims() == store.dims())) {
        fail(ErrorKind::Shape, "query record dims " + to_string(map.dims()) + " differ from store dims " +
                                   to_string(store.dims()));
    }
    return project_roi(map, query.spec);
}

std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::filesystem::path heatmap_file(const std::filesystem::path& dir, const std::string& image_id) {
    return dir / (image_id + ".pgm");
}

std::vector<ManifestEntry> load_manifest_any(const std::filesystem::path& path) {
    std::filesystem::path manifest = path;
    if (path.extension() != ".manifest") manifest = manifest_path(path);
    std::ifstream in(manifest);
    if (!in) fail(ErrorKind::Io, "cannot open manifest " + manifest.string());
    std::uint64_t lines = 0;
    std::string line;
    while (std::getline(in, line)) lines += line.empty() ? 0 : 1;
    return read_manifest(manifest, lines);
}

}  // namespace

unsigned default_workers() {
    if (const char* env = std::getenv("DTM_WORKERS"); env != nullptr) {
        char* end = nullptr;
        const unsigned long value = std::strtoul(env, &end, 10);
        if (end != env && *end == '\0' && value > 0 && value < 4096) return static_cast<unsigned>(value);
    }
    return 1;
}

std::vector<std::uint8_t> to_gray(const ScoreMap& map) {
    std::vector<std::uint8_t> pixels(map.values.size(), 0);
    if (map.values.empty()) return pixels;
    const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
    const double min = *lo;
    const double range = *hi - *lo;
    if (range <= 0.0) return pixels;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        pixels[i] = static_cast<std::uint8_t>(std::lround((map.values[i] - min) / range * 255.0));
    }
    return pixels;
}

void write_heatmap(const ScoreMap& map, const std::filesystem::path& path) {
    const auto pixels = to_gray(map);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "P5\n" << map.width << ' ' << map.height << "\n255\n";
        out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        out.close();
        if (!out) fail(ErrorKind::Io, "cannot write heatmap " + path.string());
    }
    std::ofstream txt(path.string() + ".txt", std::ios::trunc);
    txt << std::setprecision(9);
    for (std::uint32_t y = 0; y < map.height; ++y) {
        for (std::uint32_t x = 0; x < map.width; ++x) txt << (x == 0 ? "" : " ") << map.at(x, y);
        txt << '\n';
    }
    txt.close();
    if (!txt) fail(ErrorKind::Io, "cannot write heatmap values " + path.string() + ".txt");
}

std::string render_gallery(std::span<const RetrievalResult> results, std::span<const ManifestEntry> manifest,
                           const std::optional<std::filesystem::path>& heatmap_dir, const std::string& title,
                           const std::filesystem::path& page_dir) {
    std::unordered_map<std::string, const ManifestEntry*> by_id;
    for (const ManifestEntry& e : manifest) by_id.emplace(e.image_id, &e);

    std::ostringstream html;
    html << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>" << html_escape(title)
         << "</title>\n<style>\n"
            "body{font-family:sans-serif;margin:1em}\n"
            ".panel{display:inline-block;vertical-align:top;width:220px;margin:6px;padding:6px;border:1px solid #ccc}\n"
            ".panel img{max-width:208px}\n"
            "</style>\n</head>\n<body>\n<h1>"
         << html_escape(title) << "</h1>\n<p>" << results.size() << " results</p>\n<div class=\"gallery\">\n";
    for (const RetrievalResult& r : results) {
        const auto it = by_id.find(r.image_id);
        if (it == by_id.end()) fail(ErrorKind::Data, "result image id '" + r.image_id + "' is not in the manifest");
        const ManifestEntry& entry = *it->second;
        html << "<div class=\"panel\" data-rank=\"" << r.rank << "\">\n"
             << "<div class=\"rank\">#" << r.rank << "</div>\n"
             << "<div class=\"id\">" << html_escape(r.image_id) << "</div>\n"
             << "<div class=\"score\">" << std::fixed << std::setprecision(6) << r.score << std::defaultfloat
             << "</div>\n";
        if (!entry.labels.empty()) {
            std::string labels;
            for (const auto& l : entry.labels) labels += (labels.empty() ? "" : ", ") + l;
            html << "<div class=\"labels\">" << html_escape(labels) << "</div>\n";
        }
        if (entry.source_path) {
            const auto src = html_escape(*entry.source_path);
            html << "<a class=\"source\" href=\"" << src << "\"><img src=\"" << src << "\" alt=\"source\"></a>\n";
        }
        if (heatmap_dir) {
            const auto file = heatmap_file(*heatmap_dir, r.image_id);
            if (std::filesystem::exists(file)) {
                const auto link = std::filesystem::proximate(file, page_dir).generic_string();
                html << "<a class=\"heatmap\" href=\"" << html_escape(link) << "\">heatmap</a>\n";
            }
        }
        html << "</div>\n";
    }
    html << "</div>\n</body>\n</html>\n";
    return html.str();
}

int cmd_build_store(const BuildStoreOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (options.synth_config.has_value() == !options.inputs.empty()) {
            fail(ErrorKind::Config, "build-store needs either --synth CONFIG or input store files");
        }
        if (options.synth_config) {
            const SynthConfig config = read_synth_config(*options.synth_config);
            const SynthDataset dataset = generate_synthetic(config, options.out, options.workers);
            if (options.emit_queries) {
                std::filesystem::create_directories(*options.emit_queries);
                const auto queries = make_synthetic_queries(config, dataset, options.query_class,
                                                            options.query_count, options.query_seed);
                for (std::size_t i = 0; i < queries.size(); ++i) {
                    std::ostringstream name;
                    name << "query_" << std::setw(3) << std::setfill('0') << i << ".json";
                    write_query_file(queries[i], *options.emit_queries / name.str());
                }
                out << "queries " << queries.size() << " -> " << options.emit_queries->string() << '\n';
            }
            out << "records " << dataset.summary.records << " dims " << to_string(config.dims) << " bytes "
                << dataset.summary.bytes << " checksum " << hex64(dataset.payload_checksum) << '\n';
            return 0;
        }

        std::vector<EmbeddingStore> inputs;
        for (const auto& path : options.inputs) inputs.push_back(EmbeddingStore::open(path));
        const GridDims dims = inputs.front().dims();
        bool normalized = true;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (!(inputs[i].dims() == dims)) {
                fail(ErrorKind::Shape, "input " + options.inputs[i].string() + " has dims " +
                                           to_string(inputs[i].dims()) + ", expected " + to_string(dims));
            }
            normalized = normalized && inputs[i].header().normalized();
        }
        StoreWriter writer(options.out, dims, normalized);
        std::unordered_map<std::string, std::string> seen;
        std::uint64_t checksum = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            for (std::uint64_t r = 0; r < inputs[i].size(); ++r) {
                const ManifestEntry& entry = inputs[i].entry(r);
                if (auto [it, fresh] = seen.emplace(entry.image_id, options.inputs[i].string()); !fresh) {
                    fail(ErrorKind::Data, "image id '" + entry.image_id + "' appears in both " + it->second +
                                              " and " + options.inputs[i].string());
                }
                checksum = fnv1a64(inputs[i].record_bytes(r), checksum);
                writer.append(inputs[i].record_view(r), entry);
            }
        }
        const WriteSummary summary = writer.finish();
        out << "records " << summary.records << " dims " << to_string(dims) << " bytes " << summary.bytes
            << " checksum " << hex64(checksum) << '\n';
        return 0;
    });
}

int cmd_search(const SearchOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EmbeddingStore store = EmbeddingStore::open(options.store);
        const QueryFile query = read_query_file(options.query);
        const Template tmpl = query_template(query, store, options.query);
        const auto results = search(store, tmpl, SearchConfig{options.k, options.shard_size, options.workers});
        write_results(results, options.out);
        if (options.heatmap_dir) {
            std::filesystem::create_directories(*options.heatmap_dir);
            for (const RetrievalResult& r : results) {
                write_heatmap(sample_match_map(store.record_view(r.index), tmpl),
                              heatmap_file(*options.heatmap_dir, r.image_id));
            }
        }
        out << "wrote " << results.size() << " results to " << options.out.string() << '\n';
        return 0;
    });
}

int cmd_heatmap(const HeatmapOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EmbeddingStore store = EmbeddingStore::open(options.store);
        const QueryFile query = read_query_file(options.query);
        const Template tmpl = query_template(query, store, options.query);
        const ScoreMap map = sample_match_map(store.record_view(options.record), tmpl);
        write_heatmap(map, options.out);
        out << "wrote " << map.width << "x" << map.height << " heatmap for record " << options.record << " to "
            << options.out.string() << '\n';
        return 0;
    });
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EmbeddingStore store = EmbeddingStore::open(options.store);
        ExperimentConfig config;
        config.methods = parse_methods(options.methods);
        config.n = options.n;
        config.seed = options.seed;
        config.workers = options.workers;
        const auto files = list_query_files(options.queries_dir);
        if (files.empty()) fail(ErrorKind::Config, "no query files in " + options.queries_dir.string());
        const auto queries = load_eval_queries(files, store, options.default_target);
        const EvalReport report = run_experiment(store, queries, config);

        const std::string table = format_report_table(report);
        {
            std::ofstream jsonl(options.out, std::ios::trunc);
            jsonl << format_report_jsonl(report);
            jsonl.close();
            if (!jsonl) fail(ErrorKind::Io, "cannot write report " + options.out.string());
        }
        std::ofstream txt(options.out.string() + ".txt", std::ios::trunc);
        txt << table;
        txt.close();
        if (!txt) fail(ErrorKind::Io, "cannot write table " + options.out.string() + ".txt");

        for (const MethodSummary& m : report.methods) {
            out << to_string(m.method) << " hit-rate@" << report.n << " = " << std::fixed << std::setprecision(4)
                << m.hit_rate << '\n';
        }
        out << std::defaultfloat << table;
        return 0;
    });
}

int cmd_gallery(const GalleryOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto results = read_results(options.results);
        const auto manifest = load_manifest_any(options.manifest);
        std::filesystem::path page_dir = options.out.parent_path();
        if (page_dir.empty()) page_dir = ".";
        const std::string html = render_gallery(results, manifest, options.heatmap_dir, options.title, page_dir);
        std::ofstream page(options.out, std::ios::trunc);
        page << html;
        page.close();
        if (!page) fail(ErrorKind::Io, "cannot write gallery " + options.out.string());
        out << "wrote gallery with " << results.size() << " panels to " << options.out.string() << '\n';
        return 0;
    });
}

int cmd_inspect(const InspectOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const EmbeddingStore store = EmbeddingStore::open(options.store);
        const StoreHeader& h = store.header();
        out << "version " << h.version << " dtype " << int{h.dtype} << " dims " << to_string(h.dims) << " records "
            << h.record_count << " normalized " << (h.normalized() ? "yes" : "no") << '\n';
        out << "checksum " << hex64(fnv1a64(store.payload())) << '\n';
        if (h.normalized()) {
            const auto bad = store.find_unnormalized(options.check_all ? 0 : 256);
            if (bad) fail(ErrorKind::Corruption, "record " + std::to_string(*bad) + " violates the normalized flag");
            out << "normalization check passed (" << (options.check_all ? "all records" : "sampled") << ")\n";
        }
        return 0;
    });
}

}  // namespace dtm::cli
