// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-turn conversation state: agent decision, context injection and
// history trimming.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rar/llm.hpp"
#include "rar/retrieval.hpp"
#include "rar/synth.hpp"
#include "rar/tokenizer.hpp"

namespace rar {

struct ConversationThread {
    std::string thread_id;
    /// The window the model sees. At most one system message, always first.
    std::vector<ChatMessage> messages;
    /// Messages evicted by trimming, oldest first. Display only.
    std::vector<ChatMessage> archived;
    std::optional<Demographics> demographics;
    std::int64_t created_at = 0;

    void validate() const;
    /// archived followed by messages.
    std::vector<ChatMessage> full_history() const;

    bool operator==(const ConversationThread&) const = default;
};

json to_json(const ConversationThread& t);
ConversationThread conversation_thread_from_json(const json& j);

struct RetrieveDecision {
    std::string query;
};

struct DirectReply {
    std::string text;
};

using AgentDecision = std::variant<RetrieveDecision, DirectReply>;

struct TrimPolicy {
    std::size_t max_history_tokens = 8192;
    bool protect_system = true;
};

json to_json(const TrimPolicy& p);
TrimPolicy trim_policy_from_json(const json& j);

struct TrimResult {
    std::vector<ChatMessage> kept;
    std::vector<ChatMessage> evicted;
    std::optional<std::string> warning;
};

/// Tokens a message costs in the history budget: its content only.
std::size_t message_tokens(const ChatMessage& m, const Tokenizer& tokenizer);

/// Evicts the oldest non-system messages until the total fits. A system
/// message that alone exceeds the budget is kept and reported as a warning.
TrimResult trim_history(const std::vector<ChatMessage>& messages, const TrimPolicy& policy,
                        const Tokenizer& tokenizer);

ToolSchema retriever_tool();

/// Sends the agent system prompt plus `history` with the retriever tool. A
/// malformed or unknown tool call is answered with a structured error once;
/// a second bad call falls back to a direct reply.
AgentDecision decide_action(const std::vector<ChatMessage>& history, ChatEndpoint& agent,
                            const ToolSchema& tool = retriever_tool());

struct TurnConfig {
    std::size_t k = 5;
    TrimPolicy trim;
    DecodeParams agent_decode;
    DecodeParams reasoner_decode;
};

json to_json(const TurnConfig& c);
TurnConfig turn_config_from_json(const json& j);

struct TurnResult {
    ModelOutput reply;
    std::vector<std::string> retrieved_titles;
    bool retrieved = false;
    std::optional<std::string> trim_warning;
};

struct TurnServices {
    ChatEndpoint& agent;
    ChatEndpoint& reasoner;
    const VectorIndex& index;
    EmbeddingProvider& provider;
    const std::vector<CorpusRecord>& records;
    const Tokenizer& tokenizer;
};

/// The reasoner's system prompt for one retrieval turn.
std::string render_rag_system_prompt(const std::vector<RetrievalResult>& retrieved,
                                     const std::optional<Demographics>& demographics);

/// Runs one turn. On success the user message and the reply are appended to
/// `thread` (evicted messages move to the archive). On error `thread` is left
/// exactly as it was and the exception propagates.
TurnResult run_rag_turn(ConversationThread& thread, const std::string& user_msg, TurnServices services,
                        const TurnConfig& config);

}  // namespace rar
