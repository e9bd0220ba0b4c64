// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "rar/corpus.hpp"
#include "rar/prompts.hpp"
#include "scripted.hpp"

using namespace rar;
using rar::testing::ScriptedChat;
using rar::testing::TempDir;

TEST_CASE("corpus round trip") {
    TempDir dir;
    auto records = testing::toy_corpus(5);
    records[2].summary.reset();
    write_corpus(dir.file("c.jsonl"), records);
    CHECK(load_corpus(dir.file("c.jsonl")) == records);
}

TEST_CASE("load_corpus rejects bad records with the line number") {
    TempDir dir;
    auto write = [&](const std::string& text) {
        std::ofstream(dir.file("c.jsonl")) << text;
    };
    auto error_of = [&] {
        try {
            load_corpus(dir.file("c.jsonl"));
        } catch (const ParseError& e) {
            return std::string(e.what());
        }
        return std::string();
    };

    write("{\"title\":\"A\",\"full_content\":\"x\"}\n{\"title\":\"A\",\"full_content\":\"y\"}\n");
    CHECK(error_of().find(":2: duplicate title 'A'") != std::string::npos);

    write("{\"title\":\"\",\"full_content\":\"x\"}\n");
    CHECK(error_of().find("empty title") != std::string::npos);

    write("{\"title\":\"A\",\"full_content\":\"x\",\"summary\":\"\"}\n");
    CHECK(error_of().find("empty summary") != std::string::npos);

    write("\n\nnot json\n");
    CHECK(error_of().find(":3: malformed JSON") != std::string::npos);

    write("{\"title\":\"A\"}\n");
    CHECK_FALSE(error_of().empty());
}

TEST_CASE("exclusion drops only the named titles") {
    std::vector<CorpusRecord> records;
    for (int i = 0; i < 989; ++i)
        records.push_back({"Condition " + std::to_string(i), "text", std::nullopt});
    records.insert(records.begin() + 400, CorpusRecord{"Mental Health", "text", std::nullopt});
    REQUIRE(records.size() == 990);
    auto kept = exclude_records(records, {"Mental Health"});
    CHECK(kept.size() == 989);
    for (const auto& r : kept)
        CHECK(r.title != "Mental Health");
    CHECK(exclude_records(records, {"Not present"}).size() == 990);
}

TEST_CASE("summarise_corpus fills every summary in input order") {
    auto records = testing::toy_corpus(12, 3, false);
    auto llm = ScriptedChat::constant("SUMMARY");
    auto [out, report] = summarise_corpus(records, llm, std::string(prompts::kSummarisation), {{1, {}}, 4});
    REQUIRE(out.size() == records.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].title == records[i].title);
        CHECK(out[i].summary == "SUMMARY");
    }
    CHECK(report.record_count == 12);
    CHECK(report.failures.empty());
    CHECK(llm.calls() == 12);
    CHECK(llm.last_messages().at(0).content.find("sig") != std::string::npos);
}

TEST_CASE("reduction ratio arithmetic") {
    CorpusRecord r{"T", std::string(1000, 'a'), std::string(150, 'b')};
    CHECK(reduction_ratio(r) == doctest::Approx(0.15));
    auto llm = ScriptedChat::constant(std::string(150, 'b'));
    auto [out, report] = summarise_corpus({r}, llm, "{document}", {{1, {}}, 1});
    CHECK(report.mean_reduction_ratio == doctest::Approx(0.15));
    CHECK(report.per_record_ratios == std::vector<double>{0.15});
}

TEST_CASE("failed records are reported and keep no summary") {
    auto records = testing::toy_corpus(4, 1, true);
    ScriptedChat llm([](auto msgs, auto) {
        if (msgs[0].content.find("sig2w0") != std::string::npos)
            return make_model_output("   ");
        return make_model_output("<think>hmm</think> short ");
    });
    auto [out, report] = summarise_corpus(records, llm, "{document}", {{2, {}}, 2});
    CHECK(out[0].summary == "short");
    CHECK_FALSE(out[2].summary);
    REQUIRE(report.failures.size() == 1);
    CHECK(report.failures[0].title == "Condition 2");
    CHECK(report.per_record_ratios.size() == 3);
    auto j = to_json(report);
    CHECK(j["failures"][0]["title"] == "Condition 2");
}

TEST_CASE("summarisation template must carry a document slot") {
    auto llm = ScriptedChat::constant("x");
    CHECK_THROWS_AS(summarise_corpus(testing::toy_corpus(1), llm, "no slot"), ValidationError);
}
