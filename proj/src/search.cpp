#include "dtm/search.hpp"

#include <algorithm>

#include "dtm/error.hpp"
#include "dtm/scoring.hpp"
#include "parallel.hpp"

namespace dtm {

void validate(const SearchConfig& config) {
    if (config.k < 1) fail(ErrorKind::Config, "k must be >= 1");
    if (config.shard_size < 1) fail(ErrorKind::Config, "shard size must be >= 1");
}

void TopK::push(ScoredIndex candidate) {
    if (k_ == 0) return;
    if (heap_.size() < k_) {
        heap_.push_back(candidate);
        std::push_heap(heap_.begin(), heap_.end(), ranks_before);
        return;
    }
    if (!ranks_before(candidate, heap_.front())) return;
    std::pop_heap(heap_.begin(), heap_.end(), ranks_before);
    heap_.back() = candidate;
    std::push_heap(heap_.begin(), heap_.end(), ranks_before);
}

std::vector<ScoredIndex> TopK::take_sorted() {
    std::vector<ScoredIndex> out = std::move(heap_);
    heap_.clear();
    std::sort(out.begin(), out.end(), ranks_before);
    return out;
}

std::vector<std::vector<ScoredIndex>> select_top_k(
    std::uint64_t count, std::size_t lanes, const SearchConfig& config,
    const std::function<void(std::uint64_t, std::span<double>)>& score_fn) {
    validate(config);
    const std::uint64_t shards = (count + config.shard_size - 1) / config.shard_size;
    // shard_results[shard][lane]
    std::vector<std::vector<std::vector<ScoredIndex>>> shard_results(shards);
    detail::parallel_chunks(shards, config.workers, [&](std::size_t shard) {
        std::vector<TopK> best(lanes, TopK(config.k));
        std::vector<double> scores(lanes);
        const std::uint64_t begin = shard * config.shard_size;
        const std::uint64_t end = std::min<std::uint64_t>(count, begin + config.shard_size);
        for (std::uint64_t i = begin; i < end; ++i) {
            score_fn(i, scores);
            for (std::size_t lane = 0; lane < lanes; ++lane) best[lane].push({scores[lane], i});
        }
        auto& slot = shard_results[shard];
        slot.reserve(lanes);
        for (auto& b : best) slot.push_back(b.take_sorted());
    });

    std::vector<std::vector<ScoredIndex>> merged(lanes);
    for (std::size_t lane = 0; lane < lanes; ++lane) {
        auto& out = merged[lane];
        for (const auto& shard : shard_results) out.insert(out.end(), shard[lane].begin(), shard[lane].end());
        std::sort(out.begin(), out.end(), ranks_before);
        if (out.size() > config.k) out.resize(config.k);
    }
    return merged;
}

std::vector<RetrievalResult> to_results(std::span<const ScoredIndex> ranked, const EmbeddingStore& store) {
    std::vector<RetrievalResult> out;
    out.reserve(ranked.size());
    for (std::size_t r = 0; r < ranked.size(); ++r) {
        out.push_back({static_cast<std::uint32_t>(r + 1), ranked[r].index, store.entry(ranked[r].index).image_id,
                       ranked[r].score});
    }
    return out;
}

std::vector<RetrievalResult> search(const EmbeddingStore& store, const Template& tmpl, const SearchConfig& config) {
    auto lists = search_multi(store, std::span<const Template>(&tmpl, 1), config);
    return std::move(lists.front());
}

std::vector<std::vector<RetrievalResult>> search_multi(const EmbeddingStore& store,
                                                       std::span<const Template> templates,
                                                       const SearchConfig& config) {
    validate(config);
    for (std::size_t t = 0; t < templates.size(); ++t) {
        if (!(templates[t].dims() == store.dims())) {
            fail(ErrorKind::Shape, "template " + std::to_string(t) + " has dims " + to_string(templates[t].dims()) +
                                       ", store has " + to_string(store.dims()));
        }
    }
    if (templates.empty()) return {};
    if (store.size() > 0 && !store.header().normalized()) {
        fail(ErrorKind::Contract, store.path().string() + " does not hold channel-normalized records");
    }
    const auto ranked = select_top_k(store.size(), templates.size(), config,
                                     [&](std::uint64_t index, std::span<double> out) {
                                         score_many(store.record_view(index), templates, out);
                                     });
    std::vector<std::vector<RetrievalResult>> results;
    results.reserve(ranked.size());
    for (const auto& lane : ranked) results.push_back(to_results(lane, store));
    return results;
}

}  // namespace dtm
