// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "rar/retrieval.hpp"
#include "scripted.hpp"

using namespace rar;
using rar::testing::TempDir;

namespace {

// Oracle: windows from the definition, start positions k*stride until one
// reaches the end.
std::vector<std::pair<std::size_t, std::size_t>> oracle_windows(std::size_t n, std::size_t max,
                                                                std::size_t overlap) {
    std::vector<std::pair<std::size_t, std::size_t>> w;
    if (n == 0)
        return w;
    std::size_t count = n <= max ? 1 : 1 + (n - max + (max - overlap) - 1) / (max - overlap);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t b = i * (max - overlap);
        w.emplace_back(b, std::min(b + max, n));
    }
    return w;
}

std::string numbered_words(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i)
        s += "w" + std::to_string(i) + " ";
    return s;
}

}  // namespace

TEST_CASE("chunk windows for a 700-token document") {
    auto w = chunk_windows(700, 384, 50);
    REQUIRE(w.size() == 2);
    CHECK(w[0] == std::pair<std::size_t, std::size_t>{0, 384});
    CHECK(w[1] == std::pair<std::size_t, std::size_t>{334, 700});
    CHECK(chunk_windows(0, 384, 50).empty());
    CHECK(chunk_windows(384, 384, 50).size() == 1);
    CHECK(chunk_windows(385, 384, 50).size() == 2);
    CHECK_THROWS_AS(chunk_windows(10, 50, 50), ValidationError);
    CHECK_THROWS_AS(chunk_windows(10, 0, 0), ValidationError);
}

TEST_CASE("chunk windows agree with the oracle") {
    for (std::size_t max : {1u, 2u, 7u, 64u, 384u}) {
        for (std::size_t overlap = 0; overlap < max && overlap < 60; overlap += 3) {
            for (std::size_t n = 0; n < 900; n += 13)
                REQUIRE(chunk_windows(n, max, overlap) == oracle_windows(n, max, overlap));
        }
    }
}

TEST_CASE("chunk_document detokenises each window") {
    WhitespaceTokenizer tok;
    auto chunks = chunk_document("Doc", numbered_words(700), tok, 384, 50);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].token_count == 384);
    CHECK(chunks[1].token_count == 366);
    CHECK(chunks[1].seq_no == 1);
    CHECK(chunks[1].text.rfind("w334 ", 0) == 0);
    CHECK(chunks[0].text.substr(chunks[0].text.size() - 4) == "w383");
}

TEST_CASE("hashing provider is deterministic and normalised") {
    HashingEmbeddingProvider p(64);
    std::vector<std::string> texts{"Sore throat and fever", "sore THROAT and fever", ""};
    auto v = p.embed(texts);
    CHECK(v[0] == v[1]);
    double norm = 0;
    for (float x : v[0])
        norm += double(x) * x;
    CHECK(norm == doctest::Approx(1.0));
    CHECK(std::all_of(v[2].begin(), v[2].end(), [](float x) { return x == 0.0f; }));
    CHECK_THROWS_AS(HashingEmbeddingProvider(0), ValidationError);
}

TEST_CASE("top-k matches an exhaustive scan including ties") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> val(-2, 2);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t dim = trial % 2 ? 4 : 32;
        VectorIndex index(dim, Metric::l2, IndexMode::full_pages);
        std::vector<std::vector<float>> rows;
        for (int r = 0; r < 120; ++r) {
            std::vector<float> v(dim);
            for (auto& x : v)
                x = float(val(rng));
            // Duplicate rows under new titles to force exact ties.
            if (r % 5 == 4)
                v = rows[r - 3];
            rows.push_back(v);
            index.add({"T" + std::to_string(rng() % 40), std::size_t(r)}, v);
        }
        std::vector<float> q(dim);
        for (auto& x : q)
            x = float(val(rng));

        std::vector<std::pair<long, ChunkRef>> oracle;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            long d = 0;
            for (std::size_t i = 0; i < dim; ++i)
                d += long(rows[r][i] - q[i]) * long(rows[r][i] - q[i]);
            oracle.emplace_back(d, index.ref(r));
        }
        std::sort(oracle.begin(), oracle.end());

        for (std::size_t k : {1u, 7u, 120u, 500u}) {
            auto hits = index.query_top_k(q, k);
            REQUIRE(hits.size() == std::min<std::size_t>(k, rows.size()));
            for (std::size_t i = 0; i < hits.size(); ++i) {
                CHECK(hits[i].ref == oracle[i].second);
                CHECK(hits[i].score == doctest::Approx(std::sqrt(double(oracle[i].first))));
            }
        }
    }
}

TEST_CASE("cosine metric scores 1 - cosine") {
    VectorIndex index(2, Metric::cosine, IndexMode::summaries);
    index.add({"a", 0}, std::vector<float>{1, 0});
    index.add({"b", 0}, std::vector<float>{0, 3});
    index.add({"c", 0}, std::vector<float>{-2, 0});
    auto s = index.scores(std::vector<float>{5, 0});
    CHECK(s[0] == doctest::Approx(0.0));
    CHECK(s[1] == doctest::Approx(1.0));
    CHECK(s[2] == doctest::Approx(2.0));
    CHECK_THROWS_AS(index.scores(std::vector<float>{1, 2, 3}), ValidationError);
    CHECK_THROWS_AS(index.add({"d", 0}, std::vector<float>{1}), ValidationError);
}

TEST_CASE("index save and load round trip") {
    TempDir dir;
    VectorIndex index(3, Metric::cosine, IndexMode::full_pages);
    index.add({"Alpha", 0}, std::vector<float>{0.5f, -1.25f, 3.0f});
    index.add({"Alpha", 1}, std::vector<float>{1e-7f, 2.0f, -0.0f});
    index.add({"Beta", 0}, std::vector<float>{4.0f, 4.0f, 4.0f});
    const auto path = dir.file("i.bin");
    index.save(path);
    auto back = VectorIndex::load(path);
    CHECK(back.dimension() == 3);
    CHECK(back.metric() == Metric::cosine);
    CHECK(back.mode() == IndexMode::full_pages);
    REQUIRE(back.size() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(back.ref(r) == index.ref(r));
        auto a = index.vector(r), b = back.vector(r);
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }

    write_file_atomic(path, "garbage");
    CHECK_THROWS(VectorIndex::load(path));
    CHECK_THROWS_AS(VectorIndex::load(dir.file("missing.bin")), IoError);
}

TEST_CASE("expansion collapses chunks to documents") {
    std::vector<CorpusRecord> records{{"A", "full A", std::string("sum A")}, {"B", "full B", std::nullopt}};
    std::vector<ScoredChunk> hits{{{"A", 0}, 0.5f}, {{"B", 0}, 0.2f}, {{"A", 1}, 0.1f}};
    auto docs = expand_to_full_documents(hits, records, IndexMode::full_pages);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].doc_title == "A");
    CHECK(docs[0].best_score == doctest::Approx(0.1f));
    CHECK(docs[0].payload == "full A");
    CHECK(docs[0].matched_chunks == std::vector<std::pair<std::size_t, float>>{{1, 0.1f}, {0, 0.5f}});
    CHECK(docs[1].doc_title == "B");

    auto summaries = expand_to_full_documents(hits, records, IndexMode::summaries);
    CHECK(summaries[0].payload == "sum A");
    CHECK(summaries[1].payload == "full B");

    std::vector<ScoredChunk> unknown{{{"Z", 0}, 0.1f}};
    CHECK_THROWS_AS(expand_to_full_documents(unknown, records, IndexMode::summaries), ValidationError);

    auto j = to_json(docs[0]);
    auto r = retrieval_result_from_json(j);
    CHECK(r.doc_title == "A");
    CHECK(r.matched_chunks == docs[0].matched_chunks);
}

TEST_CASE("build_index in both modes") {
    auto records = testing::toy_corpus(6);
    HashingEmbeddingProvider provider(128);
    WhitespaceTokenizer tok;

    RetrievalConfig cfg;
    auto summaries = build_index(records, cfg, provider, tok);
    CHECK(summaries.size() == 6);
    CHECK(summaries.ref(3).doc_title == "Condition 3");

    cfg.mode = IndexMode::full_pages;
    cfg.max_chunk_tokens = 20;
    cfg.overlap_tokens = 5;
    auto pages = build_index(records, cfg, provider, tok);
    CHECK(pages.size() > 6);
    for (std::size_t r = 1; r < pages.size(); ++r) {
        const auto& a = pages.ref(r - 1);
        const auto& b = pages.ref(r);
        if (a.doc_title == b.doc_title)
            CHECK(b.seq_no == a.seq_no + 1);
        else
            CHECK(b.seq_no == 0);
    }

    records[0].summary.reset();
    cfg.mode = IndexMode::summaries;
    CHECK_THROWS_AS(build_index(records, cfg, provider, tok), ValidationError);
}

TEST_CASE("retrieve finds a document from its signature words") {
    auto records = testing::toy_corpus(10);
    HashingEmbeddingProvider provider(256);
    WhitespaceTokenizer tok;
    auto index = build_index(records, RetrievalConfig{}, provider, tok);
    auto docs = retrieve(testing::toy_signature(7), index, provider, records, 3);
    REQUIRE(docs.size() == 3);
    CHECK(docs[0].doc_title == "Condition 7");
    CHECK(docs[0].payload == *records[7].summary);
}

TEST_CASE("p@k is monotone and perfect for self queries") {
    auto records = testing::toy_corpus(25);
    HashingEmbeddingProvider provider(256);
    WhitespaceTokenizer tok;
    auto index = build_index(records, RetrievalConfig{}, provider, tok);

    std::vector<LabelledQuery> queries;
    for (const auto& r : records)
        queries.push_back({*r.summary, r.title});
    const std::vector<std::size_t> cutoffs{1, 5, 10, 30};
    auto table = evaluate_p_at_k(index, queries, cutoffs, provider);
    CHECK(table.at(1) == 1.0);
    CHECK(table.query_count == 25);

    std::vector<LabelledQuery> mixed;
    for (std::size_t i = 0; i < records.size(); ++i)
        mixed.push_back({"pain fever days sig" + std::to_string(i) + "w2", records[(i * 7) % 25].title});
    auto t2 = evaluate_p_at_k(index, mixed, cutoffs, provider);
    for (std::size_t i = 1; i < t2.values.size(); ++i)
        CHECK(t2.values[i - 1] <= t2.values[i]);
    CHECK(t2.at(30) == 1.0);

    const std::vector<std::size_t> unsorted{5, 1};
    CHECK_THROWS_AS(evaluate_p_at_k(index, queries, unsorted, provider), ValidationError);
    CHECK_THROWS(table.at(2));

    auto text = format_p_at_k_table({{"Summaries", 25, table}});
    CHECK(text.find("p@1") != std::string::npos);
    CHECK(text.find("1.00") != std::string::npos);
}

TEST_CASE("retrieval config validation and json") {
    RetrievalConfig c;
    c.overlap_tokens = c.max_chunk_tokens;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    RetrievalConfig d;
    d.k = 9;
    d.mode = IndexMode::full_pages;
    d.metric = Metric::cosine;
    auto back = retrieval_config_from_json(to_json(d));
    CHECK(back.k == 9);
    CHECK(back.mode == IndexMode::full_pages);
    CHECK(back.metric == Metric::cosine);
    CHECK(parse_index_mode("summaries") == IndexMode::summaries);
    CHECK_THROWS(parse_metric("manhattan"));
}
