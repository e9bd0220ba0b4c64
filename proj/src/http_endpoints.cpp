// SPDX-License-Identifier: Apache-2.0
#include "rar/http_endpoints.hpp"

#include <cstdlib>
#include <regex>

#include "httplib.h"

namespace rar {

BaseUrl parse_base_url(const std::string& url) {
    static const std::regex re(R"(^(https?)://([^/\s]+)(/[^\s]*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(url, m, re))
        throw ValidationError("invalid base url: " + url);
    BaseUrl out{to_lower(m[1].str()) + "://" + m[2].str(), m[3].str()};
    while (!out.prefix.empty() && out.prefix.back() == '/')
        out.prefix.pop_back();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (out.origin.rfind("https", 0) == 0)
        throw ValidationError("https endpoints need a build with OpenSSL: " + url);
#endif
    return out;
}

json to_json(const EndpointConfig& c) {
    json j{{"base_url", c.base_url},
           {"model", c.model},
           {"api_key_env", c.api_key_env},
           {"capabilities",
            {{"chat", c.capabilities.chat}, {"completion", c.capabilities.completion}, {"tools", c.capabilities.tools}}},
           {"decode", to_json(c.decode)},
           {"think_delimiters", {{"open", c.delimiters.open}, {"close", c.delimiters.close}}},
           {"timeout_seconds", c.timeout.count()}};
    if (c.budget_forcing)
        j["budget_forcing"] = to_json(*c.budget_forcing);
    return j;
}

EndpointConfig endpoint_config_from_json(const json& j) {
    EndpointConfig c;
    c.base_url = j.at("base_url").get<std::string>();
    c.model = j.value("model", "");
    c.api_key_env = j.value("api_key_env", "");
    if (j.contains("api_key"))
        throw ValidationError("endpoint config must name an environment variable (api_key_env), not hold a key");
    if (auto it = j.find("capabilities"); it != j.end()) {
        c.capabilities.chat = it->value("chat", c.capabilities.chat);
        c.capabilities.completion = it->value("completion", c.capabilities.completion);
        c.capabilities.tools = it->value("tools", c.capabilities.tools);
    }
    if (j.contains("decode"))
        c.decode = decode_params_from_json(j["decode"]);
    if (auto it = j.find("think_delimiters"); it != j.end()) {
        c.delimiters.open = it->value("open", c.delimiters.open);
        c.delimiters.close = it->value("close", c.delimiters.close);
    }
    c.timeout = std::chrono::seconds(j.value("timeout_seconds", c.timeout.count()));
    if (j.contains("budget_forcing") && !j["budget_forcing"].is_null())
        c.budget_forcing = budget_forcing_policy_from_json(j["budget_forcing"]);
    parse_base_url(c.base_url);
    return c;
}

namespace {

json post_json(const BaseUrl& url, const std::string& path, const json& body, std::chrono::seconds timeout,
               const std::string& api_key_env) {
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    if (!api_key_env.empty())
        if (const char* key = std::getenv(api_key_env.c_str()); key && *key)
            client.set_bearer_token_auth(key);

    const std::string target = url.prefix + path;
    auto res = client.Post(target, body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
    if (!res)
        throw EndpointError(EndpointError::Kind::transport,
                            "POST " + url.origin + target + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw EndpointError(EndpointError::Kind::status, "POST " + url.origin + target + " returned HTTP " +
                                                             std::to_string(res->status));
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw EndpointError(EndpointError::Kind::schema, "POST " + url.origin + target + ": invalid JSON: " + e.what());
    }
}

void apply_decode(json& body, const DecodeParams& defaults, const DecodeParams& params) {
    auto pick = [](const auto& a, const auto& b) { return a ? a : b; };
    if (auto v = pick(params.temperature, defaults.temperature))
        body["temperature"] = *v;
    if (auto v = pick(params.top_p, defaults.top_p))
        body["top_p"] = *v;
    if (auto v = pick(params.max_tokens, defaults.max_tokens))
        body["max_tokens"] = *v;
    if (auto v = pick(params.seed, defaults.seed))
        body["seed"] = *v;
}

json message_to_openai(const ChatMessage& m) {
    json j{{"role", to_string(m.role)}, {"content", m.content}};
    if (!m.tool_calls.empty()) {
        json calls = json::array();
        for (const auto& c : m.tool_calls)
            calls.push_back({{"id", c.call_id},
                             {"type", "function"},
                             {"function", {{"name", c.name}, {"arguments", c.arguments.dump()}}}});
        j["tool_calls"] = std::move(calls);
    }
    if (!m.tool_call_id.empty())
        j["tool_call_id"] = m.tool_call_id;
    return j;
}

[[noreturn]] void schema_error(const std::string& what) {
    throw EndpointError(EndpointError::Kind::schema, what);
}

}  // namespace

HttpChatEndpoint::HttpChatEndpoint(EndpointConfig config)
    : config_(std::move(config)), url_(parse_base_url(config_.base_url)) {
    if (!config_.capabilities.chat)
        throw EndpointError(EndpointError::Kind::capability, config_.base_url + " is not configured for chat");
}

ModelOutput HttpChatEndpoint::complete(std::span<const ChatMessage> messages, std::span<const ToolSchema> tools,
                                       const DecodeParams& params) {
    if (!tools.empty() && !config_.capabilities.tools)
        throw EndpointError(EndpointError::Kind::capability, config_.base_url + " does not support tool calls");
    json body{{"model", config_.model}, {"messages", json::array()}};
    for (const auto& m : messages)
        body["messages"].push_back(message_to_openai(m));
    if (!tools.empty()) {
        body["tools"] = json::array();
        for (const auto& t : tools)
            body["tools"].push_back(t.to_openai_json());
    }
    apply_decode(body, config_.decode, params);

    const json res = post_json(url_, "/v1/chat/completions", body, config_.timeout, config_.api_key_env);
    if (!res.contains("choices") || !res["choices"].is_array() || res["choices"].empty())
        schema_error("chat response has no choices");
    const json& msg = res["choices"][0].value("message", json::object());
    const std::string content = msg.contains("content") && msg["content"].is_string() ? msg["content"].get<std::string>()
                                                                                       : std::string();
    ModelOutput out = make_model_output(content, config_.delimiters);
    for (const char* key : {"reasoning_content", "reasoning"})
        if (!out.reasoning && msg.contains(key) && msg[key].is_string())
            out.reasoning = msg[key].get<std::string>();

    if (auto it = msg.find("tool_calls"); it != msg.end() && it->is_array()) {
        for (const auto& c : *it) {
            if (!c.contains("function") || !c["function"].contains("name"))
                schema_error("tool call without a function name");
            ToolCall call;
            call.call_id = c.value("id", "");
            call.name = c["function"]["name"].get<std::string>();
            const auto& args = c["function"].value("arguments", json("{}"));
            try {
                call.arguments = args.is_string() ? json::parse(args.get<std::string>()) : args;
            } catch (const json::exception&) {
                // Kept raw so the caller's validator reports it as malformed.
                call.arguments = json{{"_unparsed", args.get<std::string>()}};
            }
            out.tool_calls.push_back(std::move(call));
        }
    }
    if (auto it = res.find("usage"); it != res.end() && it->is_object()) {
        out.token_usage.prompt_tokens = it->value("prompt_tokens", std::size_t{0});
        out.token_usage.completion_tokens = it->value("completion_tokens", std::size_t{0});
    }
    return out;
}

HttpCompletionEndpoint::HttpCompletionEndpoint(EndpointConfig config)
    : config_(std::move(config)), url_(parse_base_url(config_.base_url)) {
    if (!config_.capabilities.completion)
        throw EndpointError(EndpointError::Kind::capability,
                            config_.base_url + " is not configured for raw completions");
}

GenerationStep HttpCompletionEndpoint::generate(const std::string& prompt, std::size_t max_tokens,
                                                std::span<const std::string> stop) {
    json body{{"model", config_.model}, {"prompt", prompt}, {"max_tokens", max_tokens}};
    if (!stop.empty())
        body["stop"] = std::vector<std::string>(stop.begin(), stop.end());
    DecodeParams no_override;
    no_override.max_tokens = max_tokens;
    apply_decode(body, config_.decode, no_override);

    const json res = post_json(url_, "/v1/completions", body, config_.timeout, config_.api_key_env);
    if (!res.contains("choices") || !res["choices"].is_array() || res["choices"].empty())
        schema_error("completion response has no choices");
    const json& choice = res["choices"][0];
    if (!choice.contains("text") || !choice["text"].is_string())
        schema_error("completion choice has no text");
    if (!res.contains("usage") || !res["usage"].contains("completion_tokens"))
        schema_error("completion response has no usage.completion_tokens");

    GenerationStep step;
    step.text = choice["text"].get<std::string>();
    step.token_count = res["usage"]["completion_tokens"].get<std::size_t>();
    const std::string finish = choice.value("finish_reason", "stop");
    if (finish == "length")
        step.finish = FinishReason::length;
    else if (choice.contains("stop_reason") && choice["stop_reason"].is_string())
        step.finish = FinishReason::stop;
    else
        step.finish = FinishReason::eos;
    return step;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string base_url, std::optional<std::size_t> dimension,
                                             std::chrono::seconds timeout)
    : url_(parse_base_url(base_url)), timeout_(timeout), dimension_(dimension) {}

std::vector<std::vector<float>> HttpEmbeddingProvider::post(std::span<const std::string> texts) const {
    const json res = post_json(url_, "/embed", json{{"texts", std::vector<std::string>(texts.begin(), texts.end())}},
                               timeout_, "");
    if (!res.contains("vectors") || !res["vectors"].is_array())
        schema_error("embedding response has no vectors array");
    try {
        return res["vectors"].get<std::vector<std::vector<float>>>();
    } catch (const json::exception& e) {
        schema_error(std::string("embedding vectors malformed: ") + e.what());
    }
}

std::size_t HttpEmbeddingProvider::dimension() const {
    std::lock_guard lock(probe_mutex_);
    if (!dimension_) {
        const std::string probe[] = {"dimension probe"};
        auto v = post(probe);
        if (v.size() != 1 || v[0].empty())
            schema_error("embedding probe returned no vector");
        dimension_ = v[0].size();
    }
    return *dimension_;
}

std::vector<std::vector<float>> HttpEmbeddingProvider::embed(std::span<const std::string> texts) {
    if (texts.empty())
        return {};
    auto vectors = post(texts);
    if (vectors.size() != texts.size())
        schema_error("embedding server returned " + std::to_string(vectors.size()) + " vectors for " +
                     std::to_string(texts.size()) + " texts");
    return vectors;
}

namespace {

class BudgetForcedHttpEndpoint final : public ChatEndpoint {
public:
    explicit BudgetForcedHttpEndpoint(const EndpointConfig& config)
        : completion_(config), chat_(completion_, *config.budget_forcing) {}

    using ChatEndpoint::complete;
    ModelOutput complete(std::span<const ChatMessage> messages, std::span<const ToolSchema> tools,
                         const DecodeParams& params) override {
        return chat_.complete(messages, tools, params);
    }

private:
    HttpCompletionEndpoint completion_;
    BudgetForcedChatEndpoint chat_;
};

}  // namespace

std::unique_ptr<ChatEndpoint> make_chat_endpoint(const EndpointConfig& config) {
    if (config.budget_forcing)
        return std::make_unique<BudgetForcedHttpEndpoint>(config);
    return std::make_unique<HttpChatEndpoint>(config);
}

}  // namespace rar
