// SPDX-License-Identifier: Apache-2.0
#pragma once

// OpenAI-compatible chat/completion clients and the /embed embedding client.

#include <chrono>
#include <memory>
#include <optional>
#include <string>

#include "rar/llm.hpp"
#include "rar/retrieval.hpp"

namespace rar {

struct BaseUrl {
    /// "http://host:port" as accepted by the HTTP client.
    std::string origin;
    /// Path prefix without a trailing slash, possibly empty.
    std::string prefix;
};

BaseUrl parse_base_url(const std::string& url);

struct EndpointCapabilities {
    bool chat = true;
    bool completion = false;
    bool tools = false;
};

struct EndpointConfig {
    std::string base_url;
    std::string model;
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored or serialised.
    std::string api_key_env;
    EndpointCapabilities capabilities;
    DecodeParams decode;
    ThinkDelimiters delimiters;
    std::chrono::seconds timeout{120};
    /// When set, chat requests are served through the completion route with
    /// budget forcing.
    std::optional<BudgetForcingPolicy> budget_forcing;
};

json to_json(const EndpointConfig& c);
EndpointConfig endpoint_config_from_json(const json& j);

/// POST {base}/v1/chat/completions.
class HttpChatEndpoint final : public ChatEndpoint {
public:
    explicit HttpChatEndpoint(EndpointConfig config);

    using ChatEndpoint::complete;
    ModelOutput complete(std::span<const ChatMessage> messages, std::span<const ToolSchema> tools,
                         const DecodeParams& params) override;

private:
    EndpointConfig config_;
    BaseUrl url_;
};

/// POST {base}/v1/completions.
class HttpCompletionEndpoint final : public CompletionEndpoint {
public:
    explicit HttpCompletionEndpoint(EndpointConfig config);

    GenerationStep generate(const std::string& prompt, std::size_t max_tokens,
                            std::span<const std::string> stop) override;

private:
    EndpointConfig config_;
    BaseUrl url_;
};

/// POST {base}/embed with {"texts": [...]} returning {"vectors": [[...]]}.
/// Without a configured dimension the first call probes the server.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string base_url, std::optional<std::size_t> dimension = std::nullopt,
                          std::chrono::seconds timeout = std::chrono::seconds{120});

    std::size_t dimension() const override;
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;

private:
    std::vector<std::vector<float>> post(std::span<const std::string> texts) const;

    BaseUrl url_;
    std::chrono::seconds timeout_;
    mutable std::optional<std::size_t> dimension_;
    mutable std::mutex probe_mutex_;
};

/// Chat endpoint for `config`: plain chat, or budget forcing over the
/// completion route when `config.budget_forcing` is set.
std::unique_ptr<ChatEndpoint> make_chat_endpoint(const EndpointConfig& config);

}  // namespace rar
