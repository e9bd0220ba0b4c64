// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <thread>

#include "httplib.h"
#include "rar/service.hpp"
#include "scripted.hpp"

using namespace rar;
using rar::testing::ScriptedChat;
using rar::testing::TempDir;

namespace {

TurnRunner echo_runner() {
    return [](ConversationThread& t, const std::string& text) {
        t.messages.push_back(ChatMessage::user(text));
        auto reply = ChatMessage::assistant("echo: " + text);
        reply.reasoning = "thought";
        reply.retrieved_titles = {"Flu"};
        t.messages.push_back(reply);
        TurnResult r;
        r.reply = make_model_output("<think>thought</think>echo: " + text);
        r.retrieved = true;
        r.retrieved_titles = {"Flu"};
        return r;
    };
}

std::string created_id(ChatApi& api, const std::string& body = "") {
    auto r = api.handle("POST", "/threads", body);
    REQUIRE(r.status == 201);
    return r.body["data"]["thread_id"];
}

std::string error_code(const ApiResponse& r) {
    CHECK(r.body["ok"] == false);
    return r.body["error"]["code"];
}

}  // namespace

TEST_CASE("thread lifecycle through the api") {
    ThreadStore store;
    ChatApi api(store, echo_runner());
    auto id = created_id(api);

    auto posted = api.handle("POST", "/threads/" + id + "/messages", R"({"text":"I feel dizzy"})");
    REQUIRE(posted.status == 200);
    CHECK(posted.body["ok"] == true);
    CHECK(posted.body["data"]["answer"] == "echo: I feel dizzy");
    CHECK(posted.body["data"]["reasoning"] == "thought");
    CHECK(posted.body["data"]["retrieved_titles"] == json::array({"Flu"}));
    CHECK_FALSE(posted.body["data"].contains("warning"));

    auto got = api.handle("GET", "/threads/" + id, "");
    REQUIRE(got.status == 200);
    const auto& msgs = got.body["data"]["messages"];
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0]["role"] == "user");
    CHECK(msgs[0]["reasoning"].is_null());
    CHECK(msgs[1]["reasoning"] == "thought");
    CHECK(got.body["data"]["demographics"].is_null());

    auto listed = api.handle("GET", "/threads", "");
    REQUIRE(listed.body["data"].size() == 1);
    CHECK(listed.body["data"][0]["title"] == "I feel dizzy");
    CHECK(listed.body["data"][0]["message_count"] == 2);
}

TEST_CASE("api errors") {
    ThreadStore store;
    ChatApi api(store, [](ConversationThread&, const std::string& text) -> TurnResult {
        if (text == "invalid")
            throw ValidationError("bad input");
        throw EndpointError(EndpointError::Kind::status, "HTTP 500");
    });
    auto id = created_id(api);

    auto missing = api.handle("GET", "/threads/nope", "");
    CHECK(missing.status == 404);
    CHECK(error_code(missing) == "not_found");
    CHECK(api.handle("POST", "/threads/nope/messages", R"({"text":"x"})").status == 404);
    CHECK(api.handle("PUT", "/threads/nope/demographics", to_json(testing::sample_demographics()).dump()).status ==
          404);

    CHECK(api.handle("POST", "/threads/" + id + "/messages", "{}").status == 400);
    CHECK(api.handle("POST", "/threads/" + id + "/messages", R"({"text":"  "})").status == 400);
    CHECK(api.handle("POST", "/threads/" + id + "/messages", R"({"text":3})").status == 400);
    CHECK(api.handle("POST", "/threads/" + id + "/messages", "{not json").status == 400);
    CHECK(api.handle("POST", "/threads/" + id + "/messages", R"({"text":"invalid"})").status == 400);

    auto upstream = api.handle("POST", "/threads/" + id + "/messages", R"({"text":"hello"})");
    CHECK(upstream.status == 502);
    CHECK(error_code(upstream) == "upstream_failure");
    CHECK(store.get(id)->messages.empty());

    CHECK(api.handle("DELETE", "/threads/" + id, "").status == 400);
    CHECK(api.handle("GET", "/elsewhere", "").status == 404);
    CHECK(api.handle("POST", "/threads", R"({"demographics":{"age":1}})").status == 400);
}

TEST_CASE("a second message while a turn is running conflicts") {
    ThreadStore store;
    ChatApi api(store, echo_runner());
    auto id = created_id(api);
    {
        auto lease = store.begin_turn(id);
        REQUIRE(std::holds_alternative<ThreadStore::TurnLease>(lease));
        auto r = api.handle("POST", "/threads/" + id + "/messages", R"({"text":"hi"})");
        CHECK(r.status == 409);
        CHECK(error_code(r) == "conflict");
        CHECK(std::get<ThreadStore::LeaseError>(store.begin_turn(id)) == ThreadStore::LeaseError::busy);
    }
    CHECK(api.handle("POST", "/threads/" + id + "/messages", R"({"text":"hi"})").status == 200);
    CHECK(std::get<ThreadStore::LeaseError>(store.begin_turn("zzz")) == ThreadStore::LeaseError::not_found);
}

TEST_CASE("demographics are stored per thread") {
    ThreadStore store;
    ChatApi api(store, echo_runner());
    const auto d = testing::sample_demographics();
    auto a = created_id(api, json{{"demographics", to_json(d)}}.dump());
    auto b = created_id(api);
    CHECK(store.get(a)->demographics == d);
    CHECK_FALSE(store.get(b)->demographics);

    auto bare = api.handle("PUT", "/threads/" + b + "/demographics", to_json(d).dump());
    CHECK(bare.status == 200);
    CHECK(bare.body["data"]["demographics"]["occupation"] == "Teacher");

    auto other = d;
    other.occupation = "Nurse";
    auto wrapped = api.handle("PUT", "/threads/" + b + "/demographics", json{{"demographics", to_json(other)}}.dump());
    CHECK(wrapped.status == 200);
    CHECK(store.get(b)->demographics->occupation == "Nurse");
    CHECK(store.get(a)->demographics->occupation == "Teacher");
    CHECK(api.handle("PUT", "/threads/" + b + "/demographics", R"({"age":"1"})").status == 400);
}

TEST_CASE("snapshots survive a restart and are byte stable") {
    TempDir dir;
    const auto path = dir.file("threads.json");
    std::string id;
    std::string snap;
    {
        ThreadStore store(path);
        ChatApi api(store, echo_runner());
        id = created_id(api, json{{"demographics", to_json(testing::sample_demographics())}}.dump());
        created_id(api);
        api.handle("POST", "/threads/" + id + "/messages", R"({"text":"one"})");
        snap = store.snapshot();
        CHECK(snap == store.snapshot());
        CHECK(read_file(path) == snap);
    }
    ThreadStore reopened(path);
    CHECK(reopened.snapshot() == snap);
    auto t = reopened.get(id);
    REQUIRE(t);
    REQUIRE(t->messages.size() == 2);
    CHECK(t->messages[1].reasoning == "thought");
    CHECK(t->demographics == testing::sample_demographics());

    write_file_atomic(path, "{broken");
    CHECK_THROWS_AS(ThreadStore{path}, ParseError);
}

TEST_CASE("thread view hides tool messages and marks archived turns") {
    ConversationThread t{"x", {ChatMessage::user("now")}, {ChatMessage::user("old")}, std::nullopt, 1};
    ChatMessage tool;
    tool.role = Role::tool;
    tool.content = "{}";
    tool.tool_call_id = "c1";
    t.messages.push_back(tool);
    auto v = thread_view(t);
    REQUIRE(v["messages"].size() == 2);
    CHECK(v["messages"][0]["archived"] == true);
    CHECK(v["messages"][1]["content"] == "now");
}

TEST_CASE("real turns through make_turn_runner") {
    auto records = testing::toy_corpus(6);
    HashingEmbeddingProvider provider(128);
    WhitespaceTokenizer tok;
    auto index = build_index(records, RetrievalConfig{}, provider, tok);
    ScriptedChat agent([](auto, auto) {
        return testing::tool_call_output("retrieve_condition_context", {{"query", testing::toy_signature(1)}});
    });
    auto reasoner = ScriptedChat::constant("<think>why</think>See a GP.");
    ThreadStore store;
    ChatApi api(store, make_turn_runner({agent, reasoner, index, provider, records, tok}, TurnConfig{}));
    auto id = created_id(api);
    auto r = api.handle("POST", "/threads/" + id + "/messages", R"({"text":"sig1w0 again"})");
    REQUIRE(r.status == 200);
    CHECK(r.body["data"]["answer"] == "See a GP.");
    CHECK(r.body["data"]["reasoning"] == "why");
    CHECK(r.body["data"]["retrieved_titles"][0] == "Condition 1");
}

TEST_CASE("http transport") {
    ::setenv("RAR_SERVICE_SECRET", "sk-never-shown", 1);
    ThreadStore store;
    ChatApi api(store, echo_runner());
    HttpServer server(api, [](const std::string& method, const std::string& path, const auto& headers) {
        if (path == "/threads" && method == "GET")
            return true;
        auto it = headers.find("X-Token");
        return it != headers.end() && it->second == "letmein";
    });
    const int port = server.bind("127.0.0.1", 0);
    std::thread loop([&] { server.listen(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto denied = client.Post("/threads", "{}", "application/json");
    REQUIRE(denied);
    CHECK(denied->status == 401);

    httplib::Headers token{{"X-Token", "letmein"}};
    auto created = client.Post("/threads", token, "{}", "application/json");
    REQUIRE(created);
    CHECK(created->status == 201);
    CHECK(created->get_header_value("Access-Control-Allow-Origin") == "*");
    const std::string id = json::parse(created->body)["data"]["thread_id"];

    auto posted = client.Post("/threads/" + id + "/messages", token, R"({"text":"hi"})", "application/json");
    REQUIRE(posted);
    CHECK(posted->status == 200);
    CHECK(json::parse(posted->body)["data"]["answer"] == "echo: hi");

    auto listed = client.Get("/threads");
    REQUIRE(listed);
    CHECK(listed->status == 200);
    CHECK(listed->body.find("sk-never-shown") == std::string::npos);

    auto missing = client.Get("/threads/unknown", token);
    REQUIRE(missing);
    CHECK(missing->status == 404);

    auto preflight = client.Options("/threads");
    REQUIRE(preflight);
    CHECK(preflight->status == 204);
    CHECK(preflight->get_header_value("Access-Control-Allow-Methods").find("PUT") != std::string::npos);

    server.stop();
    loop.join();
    ::unsetenv("RAR_SERVICE_SECRET");
}
