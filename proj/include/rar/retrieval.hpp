// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rar/corpus.hpp"
#include "rar/tokenizer.hpp"

namespace rar {

enum class IndexMode : std::uint8_t { full_pages = 0, summaries = 1 };
enum class Metric : std::uint8_t { l2 = 0, cosine = 1 };

std::string_view to_string(IndexMode m);
std::string_view to_string(Metric m);
IndexMode parse_index_mode(std::string_view s);
Metric parse_metric(std::string_view s);

struct RetrievalConfig {
    std::size_t k = 5;
    IndexMode mode = IndexMode::summaries;
    std::size_t max_chunk_tokens = 384;
    std::size_t overlap_tokens = 50;
    Metric metric = Metric::l2;
    std::size_t embed_batch_size = 32;
    std::size_t embed_parallelism = 1;

    void validate() const;
};

json to_json(const RetrievalConfig& c);
RetrievalConfig retrieval_config_from_json(const json& j);

struct Chunk {
    std::string doc_title;
    std::size_t seq_no = 0;
    std::string text;
    std::size_t token_count = 0;
};

/// Half-open token windows [begin, end) of at most `max_tokens` tokens,
/// advancing by `max_tokens - overlap`. Consecutive windows share exactly
/// `overlap` tokens; the last window ends at `n_tokens`.
std::vector<std::pair<std::size_t, std::size_t>> chunk_windows(std::size_t n_tokens,
                                                               std::size_t max_tokens,
                                                               std::size_t overlap);

std::vector<Chunk> chunk_document(const std::string& doc_title, const std::string& text,
                                  const Tokenizer& tokenizer, std::size_t max_tokens,
                                  std::size_t overlap);

/// Batch text-to-vector provider. Must return identical vectors for identical
/// inputs and be safe to call concurrently.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::size_t dimension() const = 0;
    virtual std::vector<std::vector<float>> embed(std::span<const std::string> texts) = 0;
};

/// Offline provider: signed feature hashing of lower-cased word unigrams and
/// bigrams, L2-normalised. Texts sharing vocabulary land close together.
class HashingEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HashingEmbeddingProvider(std::size_t dimension = 768);

    std::size_t dimension() const override { return dimension_; }
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;

private:
    std::size_t dimension_;
};

/// Embeds and checks that every vector has the provider's dimension.
std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts,
                                            EmbeddingProvider& provider);

struct ChunkRef {
    std::string doc_title;
    std::size_t seq_no = 0;

    auto operator<=>(const ChunkRef&) const = default;
};

struct ScoredChunk {
    ChunkRef ref;
    float score = 0.0f;
};

/// Exact in-memory vector index. Built once, then read-only; concurrent
/// queries are safe.
class VectorIndex {
public:
    VectorIndex(std::size_t dimension, Metric metric, IndexMode mode);

    std::size_t dimension() const { return dimension_; }
    Metric metric() const { return metric_; }
    IndexMode mode() const { return mode_; }
    std::size_t size() const { return refs_.size(); }

    void add(ChunkRef ref, std::span<const float> vector);

    const ChunkRef& ref(std::size_t row) const { return refs_.at(row); }
    std::span<const float> vector(std::size_t row) const;

    /// Distance from `query` to every row (L2 distance, or 1 - cosine).
    std::vector<float> scores(std::span<const float> query) const;

    /// The `k` closest rows (all rows if fewer), ascending by score; ties
    /// ordered by (doc_title, seq_no).
    std::vector<ScoredChunk> query_top_k(std::span<const float> query, std::size_t k) const;

    /// Binary file: magic, version, dimension, metric, mode, count, then
    /// little-endian float32 rows. Row provenance goes to
    /// `path + ".manifest.json"`.
    void save(const std::string& path) const;
    static VectorIndex load(const std::string& path);

private:
    std::size_t dimension_;
    Metric metric_;
    IndexMode mode_;
    std::vector<float> data_;
    std::vector<float> norms_;
    std::vector<ChunkRef> refs_;
};

/// Summaries mode: one vector per record summary. Full-pages mode: one vector
/// per chunk of full_content. Rows are laid out by record then seq_no.
VectorIndex build_index(const std::vector<CorpusRecord>& records, const RetrievalConfig& config,
                        EmbeddingProvider& provider, const Tokenizer& tokenizer);

struct RetrievalResult {
    std::string doc_title;
    float best_score = 0.0f;
    std::vector<std::pair<std::size_t, float>> matched_chunks;
    std::string payload;
};

json to_json(const RetrievalResult& r);
RetrievalResult retrieval_result_from_json(const json& j);

/// Collapses chunk hits to whole documents ordered by best score (ties by
/// title). The payload is the summary in summaries mode, else full_content.
std::vector<RetrievalResult> expand_to_full_documents(std::span<const ScoredChunk> hits,
                                                      const std::vector<CorpusRecord>& records,
                                                      IndexMode mode);

/// Embeds `query`, takes the top `k` chunk hits and expands them.
std::vector<RetrievalResult> retrieve(const std::string& query, const VectorIndex& index,
                                      EmbeddingProvider& provider,
                                      const std::vector<CorpusRecord>& records, std::size_t k);

struct PAtKTable {
    std::vector<std::size_t> cutoffs;
    std::vector<double> values;
    std::size_t query_count = 0;

    double at(std::size_t cutoff) const;
};

json to_json(const PAtKTable& t);

struct LabelledQuery {
    std::string text;
    std::string gold_title;
};

/// Per-query rank hit: the smallest cutoff position (1-based) of the gold
/// document among the top `max_k` chunk hits, or 0 when absent.
std::vector<std::size_t> gold_ranks(const VectorIndex& index, std::span<const LabelledQuery> queries,
                                    std::size_t max_k, EmbeddingProvider& provider);

/// values[i] = fraction of queries whose gold title is among the documents of
/// the top cutoffs[i] entries.
PAtKTable evaluate_p_at_k(const VectorIndex& index, std::span<const LabelledQuery> queries,
                          std::span<const std::size_t> cutoffs, EmbeddingProvider& provider);

struct PAtKRow {
    std::string label;
    std::size_t documents = 0;
    PAtKTable table;
};

/// Text table with an Input and Documents column followed by one p@k column
/// per cutoff of the first row.
std::string format_p_at_k_table(const std::vector<PAtKRow>& rows);

}  // namespace rar
