// SPDX-License-Identifier: Apache-2.0
#include "rar/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

#include "rar/kernels/distance.hpp"

namespace rar {

std::string_view to_string(IndexMode m) { return m == IndexMode::full_pages ? "full_pages" : "summaries"; }
std::string_view to_string(Metric m) { return m == Metric::l2 ? "l2" : "cosine"; }

IndexMode parse_index_mode(std::string_view s) {
    if (s == "full_pages" || s == "full-pages")
        return IndexMode::full_pages;
    if (s == "summaries")
        return IndexMode::summaries;
    throw ParseError("unknown index mode: " + std::string(s));
}

Metric parse_metric(std::string_view s) {
    if (s == "l2")
        return Metric::l2;
    if (s == "cosine")
        return Metric::cosine;
    throw ParseError("unknown metric: " + std::string(s));
}

void RetrievalConfig::validate() const {
    if (k < 1)
        throw ValidationError("k must be >= 1");
    if (max_chunk_tokens < 1 || overlap_tokens >= max_chunk_tokens)
        throw ValidationError("overlap_tokens must be smaller than max_chunk_tokens");
    if (embed_batch_size < 1)
        throw ValidationError("embed_batch_size must be >= 1");
}

json to_json(const RetrievalConfig& c) {
    return {{"k", c.k},
            {"mode", to_string(c.mode)},
            {"max_chunk_tokens", c.max_chunk_tokens},
            {"overlap_tokens", c.overlap_tokens},
            {"metric", to_string(c.metric)},
            {"embed_batch_size", c.embed_batch_size},
            {"embed_parallelism", c.embed_parallelism}};
}

RetrievalConfig retrieval_config_from_json(const json& j) {
    RetrievalConfig c;
    c.k = j.value("k", c.k);
    if (j.contains("mode"))
        c.mode = parse_index_mode(j["mode"].get<std::string>());
    c.max_chunk_tokens = j.value("max_chunk_tokens", c.max_chunk_tokens);
    c.overlap_tokens = j.value("overlap_tokens", c.overlap_tokens);
    if (j.contains("metric"))
        c.metric = parse_metric(j["metric"].get<std::string>());
    c.embed_batch_size = j.value("embed_batch_size", c.embed_batch_size);
    c.embed_parallelism = j.value("embed_parallelism", c.embed_parallelism);
    c.validate();
    return c;
}

std::vector<std::pair<std::size_t, std::size_t>> chunk_windows(std::size_t n_tokens,
                                                               std::size_t max_tokens,
                                                               std::size_t overlap) {
    if (max_tokens == 0 || overlap >= max_tokens)
        throw ValidationError("chunking requires max_tokens > overlap >= 0");
    std::vector<std::pair<std::size_t, std::size_t>> windows;
    const std::size_t stride = max_tokens - overlap;
    for (std::size_t begin = 0; begin < n_tokens; begin += stride) {
        const std::size_t end = std::min(begin + max_tokens, n_tokens);
        windows.emplace_back(begin, end);
        if (end == n_tokens)
            break;
    }
    return windows;
}

std::vector<Chunk> chunk_document(const std::string& doc_title, const std::string& text,
                                  const Tokenizer& tokenizer, std::size_t max_tokens,
                                  std::size_t overlap) {
    const auto tokens = tokenizer.tokenize(text);
    std::vector<Chunk> chunks;
    const auto windows = chunk_windows(tokens.size(), max_tokens, overlap);
    chunks.reserve(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        auto [b, e] = windows[i];
        std::span<const std::string> slice(tokens.data() + b, e - b);
        chunks.push_back({doc_title, i, tokenizer.detokenize(slice), e - b});
    }
    return chunks;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<std::string> hashing_terms(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty())
        words.push_back(std::move(cur));
    return words;
}

}  // namespace

HashingEmbeddingProvider::HashingEmbeddingProvider(std::size_t dimension) : dimension_(dimension) {
    if (dimension_ == 0)
        throw ValidationError("embedding dimension must be positive");
}

std::vector<std::vector<float>> HashingEmbeddingProvider::embed(std::span<const std::string> texts) {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        std::vector<float> v(dimension_, 0.0f);
        const auto words = hashing_terms(text);
        auto add = [&](std::string_view term, float weight) {
            const auto h = fnv1a(term);
            const float sign = (h >> 63) ? -1.0f : 1.0f;
            v[h % dimension_] += sign * weight;
        };
        for (std::size_t i = 0; i < words.size(); ++i) {
            add(words[i], 1.0f);
            if (i + 1 < words.size())
                add(words[i] + ' ' + words[i + 1], 0.5f);
        }
        double norm = 0.0;
        for (float x : v)
            norm += static_cast<double>(x) * x;
        if (norm > 0.0) {
            const float inv = static_cast<float>(1.0 / std::sqrt(norm));
            for (float& x : v)
                x *= inv;
        }
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts,
                                            EmbeddingProvider& provider) {
    if (texts.empty())
        return {};
    auto vectors = provider.embed(texts);
    if (vectors.size() != texts.size())
        throw EndpointError(EndpointError::Kind::schema,
                            "embedding provider returned " + std::to_string(vectors.size()) +
                                " vectors for " + std::to_string(texts.size()) + " texts");
    for (const auto& v : vectors) {
        if (v.size() != provider.dimension())
            throw ValidationError("embedding dimension mismatch: expected " +
                                  std::to_string(provider.dimension()) + ", got " +
                                  std::to_string(v.size()));
    }
    return vectors;
}

VectorIndex::VectorIndex(std::size_t dimension, Metric metric, IndexMode mode)
    : dimension_(dimension), metric_(metric), mode_(mode) {
    if (dimension_ == 0)
        throw ValidationError("index dimension must be positive");
}

void VectorIndex::add(ChunkRef ref, std::span<const float> vector) {
    if (vector.size() != dimension_)
        throw ValidationError("vector dimension " + std::to_string(vector.size()) +
                              " does not match index dimension " + std::to_string(dimension_));
    data_.insert(data_.end(), vector.begin(), vector.end());
    norms_.push_back(std::sqrt(kernels::dot(vector, vector)));
    refs_.push_back(std::move(ref));
}

std::span<const float> VectorIndex::vector(std::size_t row) const {
    if (row >= refs_.size())
        throw std::out_of_range("index row out of range");
    return {data_.data() + row * dimension_, dimension_};
}

std::vector<float> VectorIndex::scores(std::span<const float> query) const {
    if (query.size() != dimension_)
        throw ValidationError("query dimension " + std::to_string(query.size()) +
                              " does not match index dimension " + std::to_string(dimension_));
    std::vector<float> out(refs_.size());
    if (metric_ == Metric::l2) {
        kernels::l2_squared_rows(query, data_, out);
        for (float& s : out)
            s = std::sqrt(s);
    } else {
        kernels::dot_rows(query, data_, out);
        const float qn = std::sqrt(kernels::dot(query, query));
        for (std::size_t i = 0; i < out.size(); ++i) {
            const float denom = qn * norms_[i];
            out[i] = denom > 0.0f ? 1.0f - out[i] / denom : 1.0f;
        }
    }
    return out;
}

std::vector<ScoredChunk> VectorIndex::query_top_k(std::span<const float> query, std::size_t k) const {
    const auto all = scores(query);
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    auto less = [&](std::size_t a, std::size_t b) {
        if (all[a] != all[b])
            return all[a] < all[b];
        return refs_[a] < refs_[b];
    };
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
    std::vector<ScoredChunk> hits;
    hits.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
        hits.push_back({refs_[order[i]], all[order[i]]});
    return hits;
}

namespace {

constexpr char kMagic[8] = {'R', 'A', 'R', 'V', 'I', 'D', 'X', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size())
        throw ParseError("index file truncated");
    char buf[sizeof(T)];
    std::memcpy(buf, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

}  // namespace

void VectorIndex::save(const std::string& path) const {
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dimension_));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(metric_));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(mode_));
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint64_t>(out, refs_.size());
    out.reserve(out.size() + data_.size() * sizeof(float));
    for (float f : data_)
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    write_file_atomic(path, out);

    json rows = json::array();
    for (const auto& r : refs_)
        rows.push_back({{"title", r.doc_title}, {"seq_no", r.seq_no}});
    json manifest{{"dimension", dimension_},
                  {"metric", to_string(metric_)},
                  {"mode", to_string(mode_)},
                  {"count", refs_.size()},
                  {"rows", rows}};
    write_file_atomic(path + ".manifest.json", manifest.dump(1));
}

VectorIndex VectorIndex::load(const std::string& path) {
    const std::string in = read_file(path);
    if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
        throw ParseError(path + ": not a vector index file");
    std::size_t pos = sizeof(kMagic);
    const auto version = get_le<std::uint32_t>(in, pos);
    if (version != kVersion)
        throw ParseError(path + ": unsupported index version " + std::to_string(version));
    const auto dim = get_le<std::uint32_t>(in, pos);
    const auto metric = get_le<std::uint8_t>(in, pos);
    const auto mode = get_le<std::uint8_t>(in, pos);
    get_le<std::uint16_t>(in, pos);
    const auto count = get_le<std::uint64_t>(in, pos);
    if (metric > 1 || mode > 1)
        throw ParseError(path + ": bad metric or mode byte");
    if (in.size() - pos != count * dim * sizeof(float))
        throw ParseError(path + ": payload size does not match header");

    json manifest;
    try {
        manifest = json::parse(read_file(path + ".manifest.json"));
    } catch (const json::exception& e) {
        throw ParseError(path + ".manifest.json: " + e.what());
    }
    const auto& rows = manifest.at("rows");
    if (rows.size() != count)
        throw ParseError(path + ": manifest row count does not match header");

    VectorIndex index(dim, static_cast<Metric>(metric), static_cast<IndexMode>(mode));
    std::vector<float> v(dim);
    for (std::size_t r = 0; r < count; ++r) {
        for (std::size_t d = 0; d < dim; ++d)
            v[d] = std::bit_cast<float>(get_le<std::uint32_t>(in, pos));
        index.add({rows[r].at("title").get<std::string>(), rows[r].at("seq_no").get<std::size_t>()}, v);
    }
    return index;
}

VectorIndex build_index(const std::vector<CorpusRecord>& records, const RetrievalConfig& config,
                        EmbeddingProvider& provider, const Tokenizer& tokenizer) {
    config.validate();
    std::vector<ChunkRef> refs;
    std::vector<std::string> texts;
    for (const auto& r : records) {
        if (config.mode == IndexMode::summaries) {
            if (!r.summary)
                throw ValidationError("record '" + r.title + "' has no summary (summaries mode)");
            refs.push_back({r.title, 0});
            texts.push_back(*r.summary);
        } else {
            for (auto& c : chunk_document(r.title, r.full_content, tokenizer, config.max_chunk_tokens,
                                          config.overlap_tokens)) {
                refs.push_back({c.doc_title, c.seq_no});
                texts.push_back(std::move(c.text));
            }
        }
    }

    const std::size_t batch = config.embed_batch_size;
    const std::size_t n_batches = (texts.size() + batch - 1) / batch;
    std::vector<std::vector<std::vector<float>>> embedded(n_batches);
    parallel_for(n_batches, config.embed_parallelism, [&](std::size_t b) {
        const std::size_t begin = b * batch;
        const std::size_t end = std::min(begin + batch, texts.size());
        embedded[b] = embed_texts(std::span<const std::string>(texts.data() + begin, end - begin), provider);
    });

    VectorIndex index(provider.dimension(), config.metric, config.mode);
    std::size_t row = 0;
    for (const auto& vectors : embedded) {
        for (const auto& v : vectors)
            index.add(refs[row++], v);
    }
    return index;
}

json to_json(const RetrievalResult& r) {
    json chunks = json::array();
    for (auto [seq, score] : r.matched_chunks)
        chunks.push_back({{"seq_no", seq}, {"score", score}});
    return {{"doc_title", r.doc_title},
            {"best_score", r.best_score},
            {"matched_chunks", chunks},
            {"payload", r.payload}};
}

RetrievalResult retrieval_result_from_json(const json& j) {
    RetrievalResult r;
    r.doc_title = j.at("doc_title").get<std::string>();
    r.best_score = j.at("best_score").get<float>();
    for (const auto& c : j.value("matched_chunks", json::array()))
        r.matched_chunks.emplace_back(c.at("seq_no").get<std::size_t>(), c.at("score").get<float>());
    r.payload = j.value("payload", "");
    return r;
}

std::vector<RetrievalResult> expand_to_full_documents(std::span<const ScoredChunk> hits,
                                                      const std::vector<CorpusRecord>& records,
                                                      IndexMode mode) {
    std::unordered_map<std::string, const CorpusRecord*> by_title;
    by_title.reserve(records.size());
    for (const auto& r : records)
        by_title.emplace(r.title, &r);

    std::vector<RetrievalResult> results;
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto& hit : hits) {
        auto rec = by_title.find(hit.ref.doc_title);
        if (rec == by_title.end())
            throw ValidationError("chunk refers to unknown document '" + hit.ref.doc_title + "'");
        auto [it, inserted] = slot.emplace(hit.ref.doc_title, results.size());
        if (inserted) {
            RetrievalResult r;
            r.doc_title = hit.ref.doc_title;
            r.best_score = hit.score;
            const auto& record = *rec->second;
            r.payload = mode == IndexMode::summaries && record.summary ? *record.summary : record.full_content;
            results.push_back(std::move(r));
        }
        auto& r = results[it->second];
        r.matched_chunks.emplace_back(hit.ref.seq_no, hit.score);
        r.best_score = std::min(r.best_score, hit.score);
    }
    for (auto& r : results) {
        std::stable_sort(r.matched_chunks.begin(), r.matched_chunks.end(),
                         [](const auto& a, const auto& b) { return a.second < b.second; });
    }
    std::sort(results.begin(), results.end(), [](const RetrievalResult& a, const RetrievalResult& b) {
        if (a.best_score != b.best_score)
            return a.best_score < b.best_score;
        return a.doc_title < b.doc_title;
    });
    return results;
}

std::vector<RetrievalResult> retrieve(const std::string& query, const VectorIndex& index,
                                      EmbeddingProvider& provider,
                                      const std::vector<CorpusRecord>& records, std::size_t k) {
    const std::vector<std::string> texts{query};
    const auto vectors = embed_texts(texts, provider);
    const auto hits = index.query_top_k(vectors.front(), k);
    return expand_to_full_documents(hits, records, index.mode());
}

double PAtKTable::at(std::size_t cutoff) const {
    for (std::size_t i = 0; i < cutoffs.size(); ++i) {
        if (cutoffs[i] == cutoff)
            return values[i];
    }
    throw std::out_of_range("cutoff " + std::to_string(cutoff) + " not in table");
}

json to_json(const PAtKTable& t) {
    json values = json::object();
    for (std::size_t i = 0; i < t.cutoffs.size(); ++i)
        values["p@" + std::to_string(t.cutoffs[i])] = t.values[i];
    return {{"cutoffs", t.cutoffs}, {"values", values}, {"query_count", t.query_count}};
}

std::vector<std::size_t> gold_ranks(const VectorIndex& index, std::span<const LabelledQuery> queries,
                                    std::size_t max_k, EmbeddingProvider& provider) {
    std::vector<std::string> texts;
    texts.reserve(queries.size());
    for (const auto& q : queries)
        texts.push_back(q.text);
    const auto vectors = embed_texts(texts, provider);
    std::vector<std::size_t> ranks(queries.size(), 0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto hits = index.query_top_k(vectors[q], max_k);
        for (std::size_t i = 0; i < hits.size(); ++i) {
            if (hits[i].ref.doc_title == queries[q].gold_title) {
                ranks[q] = i + 1;
                break;
            }
        }
    }
    return ranks;
}

PAtKTable evaluate_p_at_k(const VectorIndex& index, std::span<const LabelledQuery> queries,
                          std::span<const std::size_t> cutoffs, EmbeddingProvider& provider) {
    if (!std::is_sorted(cutoffs.begin(), cutoffs.end()))
        throw ValidationError("cutoffs must be sorted ascending");
    PAtKTable table;
    table.cutoffs.assign(cutoffs.begin(), cutoffs.end());
    table.values.assign(cutoffs.size(), 0.0);
    table.query_count = queries.size();
    if (queries.empty() || cutoffs.empty())
        return table;
    const auto ranks = gold_ranks(index, queries, cutoffs.back(), provider);
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
        std::size_t hits = 0;
        for (auto r : ranks)
            hits += (r != 0 && r <= cutoffs[c]) ? 1 : 0;
        table.values[c] = static_cast<double>(hits) / static_cast<double>(queries.size());
    }
    return table;
}

std::string format_p_at_k_table(const std::vector<PAtKRow>& rows) {
    std::ostringstream out;
    if (rows.empty())
        return {};
    const auto& cutoffs = rows.front().table.cutoffs;
    out << std::left << std::setw(14) << "Input" << std::right << std::setw(11) << "Documents";
    for (auto k : cutoffs)
        out << std::setw(8) << ("p@" + std::to_string(k));
    out << '\n';
    for (const auto& row : rows) {
        out << std::left << std::setw(14) << row.label << std::right << std::setw(11) << row.documents;
        for (auto k : cutoffs)
            out << std::setw(8) << std::fixed << std::setprecision(2) << row.table.at(k);
        out << '\n';
    }
    return out.str();
}

}  // namespace rar
