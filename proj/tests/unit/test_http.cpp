// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>

#include "mock_server.hpp"
#include "rar/http_endpoints.hpp"
#include "scripted.hpp"

using namespace rar;
using rar::testing::MockServer;

namespace {

EndpointConfig config_for(const MockServer& server, std::string suffix = "") {
    EndpointConfig c;
    c.base_url = server.base_url() + suffix;
    c.model = "test-model";
    c.timeout = std::chrono::seconds{5};
    return c;
}

EndpointError::Kind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const EndpointError& e) {
        return e.kind();
    }
    FAIL("expected EndpointError");
    return EndpointError::Kind::capability;
}

}  // namespace

TEST_CASE("base url parsing") {
    auto u = parse_base_url("http://localhost:8000/api/");
    CHECK(u.origin == "http://localhost:8000");
    CHECK(u.prefix == "/api");
    CHECK(parse_base_url("HTTP://h:1").prefix.empty());
    CHECK_THROWS_AS(parse_base_url("localhost:8000"), ValidationError);
    CHECK_THROWS_AS(parse_base_url("ftp://x"), ValidationError);
}

TEST_CASE("endpoint config json never carries keys") {
    auto c = endpoint_config_from_json({{"base_url", "http://h:1"},
                                        {"model", "m"},
                                        {"api_key_env", "MY_KEY"},
                                        {"capabilities", {{"tools", true}}},
                                        {"budget_forcing", {{"max_think_tokens", 64}}}});
    CHECK(c.capabilities.tools);
    CHECK(c.capabilities.chat);
    REQUIRE(c.budget_forcing);
    CHECK(c.budget_forcing->max_think_tokens == 64);
    auto j = to_json(c);
    CHECK(j["api_key_env"] == "MY_KEY");
    CHECK_FALSE(j.contains("api_key"));
    CHECK(endpoint_config_from_json(j).model == "m");
    CHECK_THROWS_AS(endpoint_config_from_json({{"base_url", "http://h:1"}, {"api_key", "sk-secret"}}),
                    ValidationError);
}

TEST_CASE("chat request and response mapping") {
    MockServer server;
    json seen;
    server.on_chat([&](const json& req) {
        seen = req;
        return json{{"content", "<think>because</think>Take rest."}};
    });
    auto cfg = config_for(server);
    cfg.decode.temperature = 0.6;
    HttpChatEndpoint chat(cfg);
    std::vector<ChatMessage> msgs{ChatMessage::system("sys"), ChatMessage::user("hi")};
    DecodeParams p;
    p.max_tokens = 99;
    auto out = chat.complete(msgs, {}, p);
    CHECK(out.reasoning == "because");
    CHECK(out.answer == "Take rest.");
    CHECK(out.token_usage.completion_tokens == 1);
    CHECK(seen["model"] == "test-model");
    CHECK(seen["messages"].size() == 2);
    CHECK(seen["messages"][0]["role"] == "system");
    CHECK(seen["temperature"] == 0.6);
    CHECK(seen["max_tokens"] == 99);
    CHECK_FALSE(seen.contains("tools"));
}

TEST_CASE("reasoning fields from the server are used when there are no tags") {
    MockServer server;
    server.on_chat([](const json&) { return json{{"content", "Answer"}, {"reasoning_content", "server-side"}}; });
    HttpChatEndpoint chat(config_for(server));
    std::vector<ChatMessage> msgs{ChatMessage::user("q")};
    auto out = chat.complete(msgs);
    CHECK(out.reasoning == "server-side");
    CHECK(out.answer == "Answer");
}

TEST_CASE("tool calls") {
    MockServer server;
    json seen;
    server.on_chat([&](const json& req) {
        seen = req;
        return json{{"content", nullptr},
                    {"tool_calls",
                     json::array({{{"id", "call_9"},
                                   {"type", "function"},
                                   {"function", {{"name", "retrieve_condition_context"},
                                                 {"arguments", R"({"query":"knee pain"})"}}}},
                                  {{"id", "call_10"},
                                   {"type", "function"},
                                   {"function", {{"name", "retrieve_condition_context"}, {"arguments", "{oops"}}}}})}};
    });
    auto cfg = config_for(server);
    std::vector<ToolSchema> tools{{"retrieve_condition_context", "d", {{"query", ParamType::string, true, ""}}}};
    std::vector<ChatMessage> msgs{ChatMessage::user("q")};

    HttpChatEndpoint no_tools(cfg);
    CHECK(kind_of([&] { no_tools.complete(msgs, tools, {}); }) == EndpointError::Kind::capability);

    cfg.capabilities.tools = true;
    HttpChatEndpoint chat(cfg);
    auto out = chat.complete(msgs, tools, {});
    REQUIRE(out.tool_calls.size() == 2);
    CHECK(out.tool_calls[0].call_id == "call_9");
    CHECK(out.tool_calls[0].arguments == json{{"query", "knee pain"}});
    CHECK(out.tool_calls[1].arguments.contains("_unparsed"));
    CHECK(validate_tool_call(out.tool_calls[1], tools));
    CHECK(seen["tools"][0]["function"]["name"] == "retrieve_condition_context");

    // Assistant tool calls are sent back with string arguments.
    auto call_msg = ChatMessage::assistant("");
    call_msg.tool_calls.push_back(out.tool_calls[0]);
    ChatMessage tool_msg;
    tool_msg.role = Role::tool;
    tool_msg.content = "{}";
    tool_msg.tool_call_id = "call_9";
    std::vector<ChatMessage> follow{ChatMessage::user("q"), call_msg, tool_msg};
    chat.complete(follow, tools, {});
    CHECK(seen["messages"][1]["tool_calls"][0]["function"]["arguments"] == R"({"query":"knee pain"})");
    CHECK(seen["messages"][2]["tool_call_id"] == "call_9");
}

TEST_CASE("bearer auth comes from the named environment variable") {
    MockServer server;
    auto cfg = config_for(server);
    std::vector<ChatMessage> msgs{ChatMessage::user("q")};

    HttpChatEndpoint anonymous(cfg);
    anonymous.complete(msgs);

    ::setenv("RAR_TEST_API_KEY", "sk-test-123", 1);
    cfg.api_key_env = "RAR_TEST_API_KEY";
    HttpChatEndpoint authed(cfg);
    authed.complete(msgs);
    ::unsetenv("RAR_TEST_API_KEY");

    auto auth = server.authorizations();
    REQUIRE(auth.size() == 2);
    CHECK(auth[0].empty());
    CHECK(auth[1] == "Bearer sk-test-123");
}

TEST_CASE("status, schema and transport errors") {
    std::vector<ChatMessage> msgs{ChatMessage::user("q")};
    {
        MockServer server;
        server.fail_with(503);
        HttpChatEndpoint chat(config_for(server));
        CHECK(kind_of([&] { chat.complete(msgs); }) == EndpointError::Kind::status);
    }
    {
        MockServer server;
        server.on_completion([](const json&) { return json{{"choices", json::array({{{"text", "x"}}})}}; });
        auto cfg = config_for(server);
        cfg.capabilities.completion = true;
        HttpCompletionEndpoint completion(cfg);
        CHECK(kind_of([&] { completion.generate("p", 4, {}); }) == EndpointError::Kind::schema);
    }
    int port = 0;
    {
        MockServer server;
        port = server.port();
    }
    EndpointConfig dead;
    dead.base_url = "http://127.0.0.1:" + std::to_string(port);
    dead.timeout = std::chrono::seconds{2};
    HttpChatEndpoint chat(dead);
    CHECK(kind_of([&] { chat.complete(msgs); }) == EndpointError::Kind::transport);
}

TEST_CASE("base url prefixes are honoured") {
    MockServer server;
    HttpChatEndpoint chat(config_for(server, "/proxy/llm/"));
    std::vector<ChatMessage> msgs{ChatMessage::user("q")};
    chat.complete(msgs);
    HttpEmbeddingProvider embed(server.base_url() + "/emb", 768);
    const std::vector<std::string> texts{"a"};
    embed.embed(texts);
    auto paths = server.paths();
    REQUIRE(paths.size() == 2);
    CHECK(paths[0] == "/proxy/llm/v1/chat/completions");
    CHECK(paths[1] == "/emb/embed");
}

TEST_CASE("completion endpoint finish reasons") {
    MockServer server;
    json seen;
    server.on_completion([&](const json& req) {
        seen = req;
        const std::string prompt = req["prompt"];
        json choice{{"text", "abc"}, {"finish_reason", "stop"}};
        if (prompt == "len")
            choice["finish_reason"] = "length";
        else if (prompt == "stopstr")
            choice["stop_reason"] = "</think>";
        return json{{"choices", json::array({choice})}, {"usage", {{"completion_tokens", 7}}}};
    });
    auto cfg = config_for(server);
    cfg.capabilities.completion = true;
    HttpCompletionEndpoint c(cfg);
    const std::vector<std::string> stop{"</think>"};
    auto a = c.generate("len", 10, stop);
    CHECK(a.finish == FinishReason::length);
    CHECK(a.token_count == 7);
    CHECK(seen["stop"] == json::array({"</think>"}));
    CHECK(seen["max_tokens"] == 10);
    CHECK(c.generate("stopstr", 10, stop).finish == FinishReason::stop);
    auto e = c.generate("eos", 10, {});
    CHECK(e.finish == FinishReason::eos);
    CHECK_FALSE(seen.contains("stop"));

    cfg.capabilities.completion = false;
    CHECK_THROWS_AS(HttpCompletionEndpoint{cfg}, EndpointError);
}

TEST_CASE("budget forcing over http") {
    MockServer server;
    int calls = 0;
    server.on_completion([&](const json& req) {
        ++calls;
        json choice{{"text", "thought"}, {"finish_reason", "stop"}};
        if (!req.contains("stop"))
            choice["text"] = "(Flu, Self-care)";
        else
            choice["stop_reason"] = "</think>";
        return json{{"choices", json::array({choice})}, {"usage", {{"completion_tokens", 5}}}};
    });
    auto cfg = config_for(server);
    cfg.capabilities.completion = true;
    cfg.budget_forcing = BudgetForcingPolicy{};
    auto chat = make_chat_endpoint(cfg);
    std::vector<ChatMessage> msgs{ChatMessage::user("q")};
    auto out = chat->complete(msgs);
    CHECK(out.reasoning == "thoughtWaitthoughtWaitthoughtWaitthought");
    CHECK(out.answer == "(Flu, Self-care)");
    CHECK(calls == 5);
}

TEST_CASE("embedding client") {
    MockServer server;
    HttpEmbeddingProvider lazy(server.base_url());
    CHECK(server.embed_calls() == 0);
    CHECK(lazy.dimension() == 768);
    CHECK(lazy.dimension() == 768);
    CHECK(server.embed_calls() == 1);

    const std::vector<std::string> texts{"sore throat", "rash"};
    auto v = lazy.embed(texts);
    HashingEmbeddingProvider local(768);
    CHECK(v == local.embed(texts));
    CHECK(lazy.embed({}).empty());

    HttpEmbeddingProvider wrong(server.base_url(), 12);
    CHECK_THROWS_AS(embed_texts(texts, wrong), ValidationError);
}
