#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dtm/featmap.hpp"
#include "dtm/store.hpp"

namespace dtm {

struct RetrievalResult {
    std::uint32_t rank = 0;  // 1-based
    std::uint64_t index = 0;
    std::string image_id;
    double score = 0.0;

    friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

struct SearchConfig {
    std::size_t k = 10;
    std::size_t shard_size = 1024;
    unsigned workers = 1;
};

void validate(const SearchConfig& config);

struct ScoredIndex {
    double score = 0.0;
    std::uint64_t index = 0;
};

/// Ranking order: higher score first, then lower index.
inline bool ranks_before(const ScoredIndex& a, const ScoredIndex& b) noexcept {
    return a.score > b.score || (a.score == b.score && a.index < b.index);
}

/// Bounded best-k buffer. Keeps the k entries that rank first.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) {}
    void push(ScoredIndex candidate);
    /// Entries in rank order; leaves the buffer empty.
    std::vector<ScoredIndex> take_sorted();
    std::size_t size() const noexcept { return heap_.size(); }

private:
    std::size_t k_;
    std::vector<ScoredIndex> heap_;  // worst entry at front
};

/// Scores `count` records in shards and returns the best config.k per
/// scorer lane, merged deterministically. `score_fn(index, out)` writes one
/// score per lane into `out` (lanes == out.size()).
std::vector<std::vector<ScoredIndex>> select_top_k(
    std::uint64_t count, std::size_t lanes, const SearchConfig& config,
    const std::function<void(std::uint64_t, std::span<double>)>& score_fn);

std::vector<RetrievalResult> to_results(std::span<const ScoredIndex> ranked, const EmbeddingStore& store);

std::vector<RetrievalResult> search(const EmbeddingStore& store, const Template& tmpl, const SearchConfig& config);

/// One ranking per template; each equals an independent search() call, but
/// every record is read once for all templates.
std::vector<std::vector<RetrievalResult>> search_multi(const EmbeddingStore& store,
                                                       std::span<const Template> templates,
                                                       const SearchConfig& config);

}  // namespace dtm
