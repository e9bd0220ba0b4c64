// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>

#include "rar/synth.hpp"
#include "scripted.hpp"

using namespace rar;
using rar::testing::ScriptedChat;

namespace {

const char* kExampleOutput = R"(```json
{
  "general_demographics": {
    "age": 35,
    "sex": "Female",
    "occupation": "Teacher",
    "social_support": "No support network",
    "medical_history": "No known chronic conditions"
  },
  "symptoms_description": "I've had a severe headache for the past three days that won't go away, even with painkillers. It feels like a tight band around my head, and I'm also feeling slightly nauseous. My vision is a bit blurry when I stand up too quickly. I don't normally get headaches this bad, and I'm starting to feel concerned."
}
```)";

const char* kRefusal =
    R"({"error": "Insufficient symptom information in provided content to match requested severity"})";

PlanRow headache_row() {
    return {"Headaches", QueryType::basic, Disposition::urgent_primary_care, "Female"};
}

SyntheticQuery query(std::string title, Disposition d, QueryType t = QueryType::basic) {
    SyntheticQuery q;
    q.condition_title = std::move(title);
    q.disposition = d;
    q.query_type = t;
    q.demographics = testing::sample_demographics();
    q.symptoms_description = "symptoms";
    return q;
}

}  // namespace

TEST_CASE("disposition names") {
    CHECK(display_name(Disposition::a_and_e) == "A&E");
    CHECK(display_name(Disposition::urgent_primary_care) == "Urgent Primary Care");
    CHECK(parse_disposition("self-care") == Disposition::self_care);
    CHECK(parse_disposition("a_and_e") == Disposition::a_and_e);
    CHECK(parse_disposition("URGENT PRIMARY CARE") == Disposition::urgent_primary_care);
    CHECK_THROWS(parse_disposition("ICU"));
    CHECK(severity_rank(Disposition::self_care) < severity_rank(Disposition::a_and_e));
    CHECK(parse_query_type("downplay") == QueryType::downplay);
}

TEST_CASE("the example output parses into a query") {
    auto outcome = parse_generation_response(kExampleOutput, headache_row());
    REQUIRE(std::holds_alternative<SyntheticQuery>(outcome));
    const auto& q = std::get<SyntheticQuery>(outcome);
    CHECK(q.demographics.age == "35");
    CHECK(q.demographics.occupation == "Teacher");
    CHECK(q.demographics == testing::sample_demographics());
    CHECK(q.condition_title == "Headaches");
    CHECK(q.disposition == Disposition::urgent_primary_care);
    CHECK(q.symptoms_description.rfind("I've had a severe headache", 0) == 0);
}

TEST_CASE("refusals and malformed responses") {
    auto outcome = parse_generation_response(kRefusal, headache_row());
    REQUIRE(std::holds_alternative<GenerationRefusal>(outcome));
    CHECK(std::get<GenerationRefusal>(outcome).reason ==
          "Insufficient symptom information in provided content to match requested severity");

    CHECK_THROWS_AS(parse_generation_response("not json", headache_row()), ParseError);
    CHECK_THROWS_AS(parse_generation_response("[1,2]", headache_row()), ParseError);
    CHECK_THROWS_AS(parse_generation_response(R"({"symptoms_description":"x"})", headache_row()), ParseError);
    CHECK_THROWS_AS(
        parse_generation_response(
            R"({"general_demographics":{"age":"above 80","sex":"Male","occupation":"Retired","social_support":"Family","medical_history":"None"},"symptoms_description":"  "})",
            headache_row()),
        ParseError);

    auto bare = parse_generation_response(
        R"(Sure! {"general_demographics":{"age":"above 80","sex":"Male","occupation":"Retired","social_support":"Family","medical_history":"None"},"symptoms_description":"dizzy"} hope that helps)",
        headache_row());
    REQUIRE(std::holds_alternative<SyntheticQuery>(bare));
    CHECK(std::get<SyntheticQuery>(bare).demographics.age == "above 80");
}

TEST_CASE("generation prompt substitution") {
    CorpusRecord r{"Headaches", "HEADACHE PAGE CONTENT", std::nullopt};
    auto p = build_generation_prompt(r, QueryType::basic, Disposition::self_care, "Female");
    CHECK(p.find("Query Type: basic") != std::string::npos);
    CHECK(p.find("Sex: Female") != std::string::npos);
    CHECK(p.find("HEADACHE PAGE CONTENT") != std::string::npos);
    CHECK(p.find("{query_type}") == std::string::npos);
    CHECK(p.find("{conditions_content}") == std::string::npos);
    // The embedded example JSON survives substitution.
    CHECK(p.find("\"occupation\": \"Teacher\"") != std::string::npos);
}

TEST_CASE("query set json round trip") {
    testing::TempDir dir;
    std::vector<SyntheticQuery> qs{query("A", Disposition::a_and_e, QueryType::hypochondriac),
                                   query("B", Disposition::self_care)};
    write_query_set(dir.file("q.jsonl"), qs);
    CHECK(load_query_set(dir.file("q.jsonl")) == qs);
    auto j = to_json(qs[0]);
    CHECK(j["general_demographics"]["age"] == "35");
    CHECK(j.contains("symptoms_description"));
    CHECK(synthetic_query_from_json(j) == qs[0]);
    CHECK_FALSE(generation_json(qs[0]).contains("condition_title"));
}

TEST_CASE("plans balance types and dispositions and alternate sex") {
    auto records = testing::toy_corpus(10);
    auto plan = make_plan(records, 90, 42);
    REQUIRE(plan.size() == 90);
    std::map<std::pair<QueryType, Disposition>, int> cells;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        ++cells[{plan[i].query_type, plan[i].disposition}];
        CHECK(plan[i].sex == (i % 2 == 0 ? "Female" : "Male"));
    }
    CHECK(cells.size() == 9);
    for (const auto& [_, n] : cells)
        CHECK(n == 10);
    CHECK(make_plan(records, 90, 42)[5].condition_title == plan[5].condition_title);
    CHECK_THROWS_AS(make_plan({}, 3, 1), ValidationError);
}

TEST_CASE("generate_query_set yields one outcome per row") {
    auto records = testing::toy_corpus(4);
    auto plan = make_plan(records, 4, 1);

    auto valid = ScriptedChat::constant(kExampleOutput);
    auto r = generate_query_set(records, valid, plan, {{1, {}}, 2});
    CHECK(r.queries.size() == 4);
    CHECK(r.refusals.empty());
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(r.queries[i].condition_title == plan[i].condition_title);

    auto refusing = ScriptedChat::constant(kRefusal);
    r = generate_query_set(records, refusing, plan, {{1, {}}, 2});
    CHECK(r.queries.empty());
    CHECK(r.refusals.size() == 4);

    int n = 0;
    ScriptedChat mixed([&](auto, auto) {
        static const char* replies[] = {kExampleOutput, kRefusal, "garbage"};
        return make_model_output(replies[n++ % 3]);
    });
    auto big_plan = make_plan(records, 30, 2);
    r = generate_query_set(records, mixed, big_plan, {{1, {}}, 1});
    CHECK(r.queries.size() + r.refusals.size() + r.failures.size() == 30);
    CHECK(r.failures.size() == 10);

    std::vector<PlanRow> bad{{"Nope", QueryType::basic, Disposition::self_care, "Male"}};
    CHECK_THROWS_AS(generate_query_set(records, valid, bad), ValidationError);
}

TEST_CASE("generate_to_target avoids forbidden pairs") {
    auto records = testing::toy_corpus(3);
    auto llm = ScriptedChat::constant(kExampleOutput);
    std::vector<std::pair<std::string, Disposition>> forbidden{{"Condition 0", Disposition::self_care},
                                                               {"Condition 1", Disposition::a_and_e}};
    auto r = generate_to_target(records, llm, 20, 9, forbidden, {{1, {}}, 2});
    CHECK(r.queries.size() == 20);
    for (const auto& q : r.queries) {
        CHECK_FALSE((q.condition_title == "Condition 0" && q.disposition == Disposition::self_care));
        CHECK_FALSE((q.condition_title == "Condition 1" && q.disposition == Disposition::a_and_e));
    }

    auto refusing = ScriptedChat::constant(kRefusal);
    auto none = generate_to_target(records, refusing, 4, 1, {}, {{1, {}}, 2});
    CHECK(none.queries.empty());
    CHECK(refusing.calls() == 20);
}

TEST_CASE("dedup_split removes overlapping pairs only") {
    std::vector<SyntheticQuery> eval{query("Flu", Disposition::self_care)};
    std::vector<SyntheticQuery> train{query("Flu", Disposition::self_care, QueryType::downplay),
                                      query("Flu", Disposition::a_and_e), query("Cold", Disposition::self_care)};
    auto r = dedup_split(eval, train);
    REQUIRE(r.kept.size() == 2);
    CHECK(r.kept[0].disposition == Disposition::a_and_e);
    CHECK(r.kept[1].condition_title == "Cold");
    REQUIRE(r.removed.size() == 1);
    CHECK(r.removed[0].query_type == QueryType::downplay);

    CHECK(dedup_split({}, train).kept.size() == 3);
    CHECK(dedup_split(eval, {}).kept.empty());
}
