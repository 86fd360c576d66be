#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"
#include "dtm/kernels.hpp"

int main(int argc, char** argv) {
    using namespace dtm::cli;

    CLI::App app{"Deep template matching retrieval over precomputed feature-map stores"};
    app.require_subcommand(1);
    const unsigned workers = default_workers();

    BuildStoreOptions build;
    build.workers = workers;
    auto* build_cmd = app.add_subcommand("build-store", "Write a store from a synthetic config or existing stores");
    build_cmd->add_option("--synth", build.synth_config, "Synthetic dataset config (JSON)");
    build_cmd->add_option("inputs", build.inputs, "Store files to concatenate");
    build_cmd->add_option("--out", build.out, "Output store path")->required();
    build_cmd->add_option("--emit-queries", build.emit_queries, "Directory for synthetic query files");
    build_cmd->add_option("--query-class", build.query_class, "Target class of emitted queries");
    build_cmd->add_option("--query-count", build.query_count, "Number of emitted queries");
    build_cmd->add_option("--seed", build.query_seed, "Seed for picking emitted queries");
    build_cmd->add_option("--workers", build.workers, "Worker threads (default: DTM_WORKERS or 1)");

    SearchOptions search;
    search.workers = workers;
    auto* search_cmd = app.add_subcommand("search", "Rank store records against a query template");
    search_cmd->add_option("--store", search.store)->required();
    search_cmd->add_option("--query", search.query)->required();
    search_cmd->add_option("--k", search.k, "Number of results")->check(CLI::PositiveNumber);
    search_cmd->add_option("--out", search.out, "Results file (JSON lines)")->required();
    search_cmd->add_option("--workers", search.workers)->check(CLI::PositiveNumber);
    search_cmd->add_option("--shard-size", search.shard_size)->check(CLI::PositiveNumber);
    search_cmd->add_option("--heatmap-dir", search.heatmap_dir, "Also write a heatmap per result");

    HeatmapOptions heatmap;
    auto* heatmap_cmd = app.add_subcommand("heatmap", "Render the sample-side match map of one record");
    heatmap_cmd->add_option("--store", heatmap.store)->required();
    heatmap_cmd->add_option("--query", heatmap.query)->required();
    heatmap_cmd->add_option("--record", heatmap.record)->required();
    heatmap_cmd->add_option("--out", heatmap.out, "PGM output; raw values go to <out>.txt")->required();

    EvalOptions eval;
    eval.workers = workers;
    auto* eval_cmd = app.add_subcommand("eval", "Hit-rate@n experiment over a directory of queries");
    eval_cmd->add_option("--store", eval.store)->required();
    eval_cmd->add_option("--queries", eval.queries_dir)->required();
    eval_cmd->add_option("--methods", eval.methods, "Comma-separated: dtm,gap,random");
    eval_cmd->add_option("--n", eval.n)->check(CLI::PositiveNumber);
    eval_cmd->add_option("--out", eval.out, "Report (JSON lines); table goes to <out>.txt")->required();
    eval_cmd->add_option("--seed", eval.seed);
    eval_cmd->add_option("--workers", eval.workers)->check(CLI::PositiveNumber);
    eval_cmd->add_option("--target", eval.default_target, "Target class for queries that name none");

    GalleryOptions gallery;
    auto* gallery_cmd = app.add_subcommand("gallery", "Static HTML page of ranked results");
    gallery_cmd->add_option("--results", gallery.results)->required();
    gallery_cmd->add_option("--manifest", gallery.manifest, "Manifest file or its store")->required();
    gallery_cmd->add_option("--out", gallery.out)->required();
    gallery_cmd->add_option("--heatmap-dir", gallery.heatmap_dir);
    gallery_cmd->add_option("--title", gallery.title);

    InspectOptions inspect;
    auto* inspect_cmd = app.add_subcommand("inspect", "Validate a store and print its header");
    inspect_cmd->add_option("--store", inspect.store)->required();
    inspect_cmd->add_flag("--all", inspect.check_all, "Check normalization of every record");

    app.add_flag_callback("--kernel-info", [] {
        std::cout << "kernel " << dtm::kernels::to_string(dtm::kernels::active().isa) << '\n';
    }, "Print the selected SIMD kernel");

    CLI11_PARSE(app, argc, argv);

    if (*build_cmd) return cmd_build_store(build, std::cout, std::cerr);
    if (*search_cmd) return cmd_search(search, std::cout, std::cerr);
    if (*heatmap_cmd) return cmd_heatmap(heatmap, std::cout, std::cerr);
    if (*eval_cmd) return cmd_eval(eval, std::cout, std::cerr);
    if (*gallery_cmd) return cmd_gallery(gallery, std::cout, std::cerr);
    if (*inspect_cmd) return cmd_inspect(inspect, std::cout, std::cerr);
    return 1;
}
