// SPDX-License-Identifier: Apache-2.0
#pragma once

// Chat/completion endpoint abstractions, chat-template rendering, reasoning
// trace parsing, tool schemas and the budget-forcing decode controller.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rar/common.hpp"

namespace rar {

enum class Role { system, user, assistant, tool };

std::string_view to_string(Role role);
Role parse_role(std::string_view s);

struct ToolCall {
    std::string name;
    json arguments = json::object();
    std::string call_id;

    bool operator==(const ToolCall&) const = default;
};

struct ChatMessage {
    Role role = Role::user;
    std::string content;
    std::vector<ToolCall> tool_calls;
    /// Set on tool messages: the call this message answers.
    std::string tool_call_id;
    // Display metadata carried with stored assistant turns. Never rendered
    // into model prompts.
    std::optional<std::string> reasoning;
    std::vector<std::string> retrieved_titles;

    static ChatMessage make(Role role, std::string text) {
        ChatMessage m;
        m.role = role;
        m.content = std::move(text);
        return m;
    }
    static ChatMessage system(std::string text) { return make(Role::system, std::move(text)); }
    static ChatMessage user(std::string text) { return make(Role::user, std::move(text)); }
    static ChatMessage assistant(std::string text) { return make(Role::assistant, std::move(text)); }

    /// Throws ValidationError when role/tool_call/content constraints fail.
    void validate() const;

    bool operator==(const ChatMessage&) const = default;
};

json to_json(const ChatMessage& m);
ChatMessage chat_message_from_json(const json& j);

enum class ParamType { string, integer, number, boolean };

std::string_view to_string(ParamType t);

struct ToolParameter {
    std::string name;
    ParamType type = ParamType::string;
    bool required = true;
    std::string description;
};

struct ToolSchema {
    std::string name;
    std::string description;
    std::vector<ToolParameter> parameters;

    /// OpenAI-style `{"type":"function","function":{...}}` object.
    json to_openai_json() const;
};

/// Returns an error description if `call` names no schema in `tools` or its
/// arguments do not validate; nullopt when the call is well-formed.
std::optional<std::string> validate_tool_call(const ToolCall& call, std::span<const ToolSchema> tools);

struct TokenUsage {
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

struct ThinkDelimiters {
    std::string open = "<think>";
    std::string close = "</think>";
};

struct ModelOutput {
    std::optional<std::string> reasoning;
    std::string answer;
    std::vector<ToolCall> tool_calls;
    std::string raw;
    TokenUsage token_usage;
    bool unterminated_reasoning = false;
};

struct ParsedReasoning {
    std::optional<std::string> reasoning;
    std::string answer;
    bool unterminated = false;
};

/// Text between the first `open` and the following `close` is reasoning; what
/// follows `close` is the answer. A close delimiter without an open one (some
/// servers strip the opening tag) also splits reasoning from answer.
ParsedReasoning parse_reasoning(std::string_view raw, const ThinkDelimiters& delimiters = {});

/// Wraps plain text into a ModelOutput, splitting reasoning off.
ModelOutput make_model_output(std::string raw, const ThinkDelimiters& delimiters = {});

inline constexpr std::string_view kImStart = "<|im_start|>";
inline constexpr std::string_view kImEnd = "<|im_end|>";

/// ChatML rendering: `<|im_start|>{role}\n{content}<|im_end|>` per message,
/// newline-joined. Content is passed through verbatim.
std::string render_chat_template(std::span<const ChatMessage> messages);

/// Warnings for content that contains template delimiters.
std::vector<std::string> lint_chat_template(std::span<const ChatMessage> messages);

struct DecodeParams {
    std::optional<double> temperature;
    std::optional<double> top_p;
    std::optional<std::size_t> max_tokens;
    std::optional<unsigned> seed;
};

json to_json(const DecodeParams& p);
DecodeParams decode_params_from_json(const json& j);

/// A chat-style endpoint. Implementations must be safe to call concurrently.
class ChatEndpoint {
public:
    virtual ~ChatEndpoint() = default;

    virtual ModelOutput complete(std::span<const ChatMessage> messages,
                                 std::span<const ToolSchema> tools, const DecodeParams& params) = 0;

    ModelOutput complete(std::span<const ChatMessage> messages) {
        return complete(messages, {}, DecodeParams{});
    }
};

enum class FinishReason { stop, length, eos };

/// One completion-style generation. `text` never includes a matched stop
/// sequence; `token_count` counts every generated token including it.
struct GenerationStep {
    std::string text;
    std::size_t token_count = 0;
    FinishReason finish = FinishReason::eos;
};

/// Raw-prompt continuation interface, required for budget forcing.
class CompletionEndpoint {
public:
    virtual ~CompletionEndpoint() = default;

    virtual GenerationStep generate(const std::string& prompt, std::size_t max_tokens,
                                    std::span<const std::string> stop) = 0;
};

struct BudgetForcingPolicy {
    std::size_t max_think_tokens = 1024;
    int max_suppressions = 3;
    std::string continuation_text = "Wait";
    std::string start_of_thinking_delimiter = "<think>";
    std::string end_of_thinking_delimiter = "</think>";
    std::size_t max_answer_tokens = 1024;

    void validate() const;
};

json to_json(const BudgetForcingPolicy& p);
BudgetForcingPolicy budget_forcing_policy_from_json(const json& j);

struct BudgetForcedResult {
    ModelOutput output;
    /// Tokens generated during the thinking phase, suppressed delimiters
    /// included.
    std::size_t thinking_tokens = 0;
    int suppressions = 0;
    /// True when thinking was ended by the token cap rather than the model.
    bool forced_end = false;
};

/// Decodes `prompt` in two phases. During thinking, an end-of-thinking
/// emission (or end of sequence) is suppressed and replaced with the
/// continuation text while suppressions remain; hitting the thinking token cap
/// inserts the delimiter. The answer phase then runs to completion.
BudgetForcedResult budget_forced_generate(CompletionEndpoint& endpoint, const std::string& prompt,
                                          const BudgetForcingPolicy& policy);

/// Presents a completion endpoint as a chat endpoint by rendering the chat
/// template and decoding with budget forcing. Tools are not supported.
class BudgetForcedChatEndpoint final : public ChatEndpoint {
public:
    BudgetForcedChatEndpoint(CompletionEndpoint& endpoint, BudgetForcingPolicy policy);

    using ChatEndpoint::complete;
    ModelOutput complete(std::span<const ChatMessage> messages, std::span<const ToolSchema> tools,
                         const DecodeParams& params) override;

private:
    CompletionEndpoint& endpoint_;
    BudgetForcingPolicy policy_;
};

}  // namespace rar
