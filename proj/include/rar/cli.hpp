// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rar/evaluator.hpp"
#include "rar/http_endpoints.hpp"
#include "rar/orchestrator.hpp"
#include "rar/traces.hpp"

namespace rar {

struct EmbeddingConfig {
    std::string provider = "hashing";
    std::string base_url;
    std::optional<std::size_t> dimension;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string store = "threads.json";
};

/// Everything the CLI reads from --config. API keys come from the
/// environment variables named in the endpoint entries.
struct AppConfig {
    RetrievalConfig retrieval;
    EmbeddingConfig embedding;
    std::map<std::string, EndpointConfig> endpoints;
    TurnConfig turn;
    ServiceConfig service;
    TrainingConfig training;
    EvalConfig eval;
    RetryPolicy retry;
    std::size_t parallelism = 4;

    const EndpointConfig& endpoint(const std::string& role) const;
};

AppConfig app_config_from_json(const json& j);
AppConfig load_app_config(const std::string& path);

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const EmbeddingConfig& config);

}  // namespace rar

namespace rar::cli {

/// Runs one subcommand. Returns the process exit code.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace rar::cli
