// SPDX-License-Identifier: Apache-2.0
#include "rar/llm.hpp"

#include <algorithm>
#include <set>

namespace rar {

std::string_view to_string(Role role) {
    switch (role) {
    case Role::system:
        return "system";
    case Role::user:
        return "user";
    case Role::assistant:
        return "assistant";
    case Role::tool:
        return "tool";
    }
    return "user";
}

Role parse_role(std::string_view s) {
    if (s == "system")
        return Role::system;
    if (s == "user")
        return Role::user;
    if (s == "assistant")
        return Role::assistant;
    if (s == "tool")
        return Role::tool;
    throw ParseError("unknown role: " + std::string(s));
}

void ChatMessage::validate() const {
    if (!tool_calls.empty() && role != Role::assistant)
        throw ValidationError(std::string(to_string(role)) + " message cannot carry tool calls");
    if (content.empty() && tool_calls.empty() && role != Role::assistant)
        throw ValidationError(std::string(to_string(role)) + " message has empty content");
}

json to_json(const ChatMessage& m) {
    json j{{"role", to_string(m.role)}, {"content", m.content}};
    if (!m.tool_calls.empty()) {
        json calls = json::array();
        for (const auto& c : m.tool_calls)
            calls.push_back({{"name", c.name}, {"arguments", c.arguments}, {"call_id", c.call_id}});
        j["tool_calls"] = std::move(calls);
    }
    if (!m.tool_call_id.empty())
        j["tool_call_id"] = m.tool_call_id;
    if (m.reasoning)
        j["reasoning"] = *m.reasoning;
    if (!m.retrieved_titles.empty())
        j["retrieved_titles"] = m.retrieved_titles;
    return j;
}

ChatMessage chat_message_from_json(const json& j) {
    ChatMessage m;
    m.role = parse_role(j.at("role").get<std::string>());
    m.content = j.value("content", "");
    if (auto it = j.find("tool_calls"); it != j.end()) {
        for (const auto& c : *it)
            m.tool_calls.push_back(
                {c.at("name").get<std::string>(), c.value("arguments", json::object()), c.value("call_id", "")});
    }
    m.tool_call_id = j.value("tool_call_id", "");
    if (auto it = j.find("reasoning"); it != j.end() && it->is_string())
        m.reasoning = it->get<std::string>();
    if (auto it = j.find("retrieved_titles"); it != j.end())
        m.retrieved_titles = it->get<std::vector<std::string>>();
    return m;
}

std::string_view to_string(ParamType t) {
    switch (t) {
    case ParamType::string:
        return "string";
    case ParamType::integer:
        return "integer";
    case ParamType::number:
        return "number";
    case ParamType::boolean:
        return "boolean";
    }
    return "string";
}

json ToolSchema::to_openai_json() const {
    json props = json::object();
    json required = json::array();
    for (const auto& p : parameters) {
        props[p.name] = {{"type", to_string(p.type)}, {"description", p.description}};
        if (p.required)
            required.push_back(p.name);
    }
    return {{"type", "function"},
            {"function",
             {{"name", name},
              {"description", description},
              {"parameters", {{"type", "object"}, {"properties", props}, {"required", required}}}}}};
}

namespace {

bool matches_type(const json& v, ParamType t) {
    switch (t) {
    case ParamType::string:
        return v.is_string();
    case ParamType::integer:
        return v.is_number_integer();
    case ParamType::number:
        return v.is_number();
    case ParamType::boolean:
        return v.is_boolean();
    }
    return false;
}

}  // namespace

std::optional<std::string> validate_tool_call(const ToolCall& call, std::span<const ToolSchema> tools) {
    auto schema = std::find_if(tools.begin(), tools.end(),
                               [&](const ToolSchema& s) { return s.name == call.name; });
    if (schema == tools.end())
        return "unknown tool '" + call.name + "'";
    if (!call.arguments.is_object())
        return "arguments for '" + call.name + "' must be a JSON object";
    std::set<std::string> known;
    for (const auto& p : schema->parameters) {
        known.insert(p.name);
        auto it = call.arguments.find(p.name);
        if (it == call.arguments.end()) {
            if (p.required)
                return "missing required argument '" + p.name + "'";
            continue;
        }
        if (!matches_type(*it, p.type))
            return "argument '" + p.name + "' must be of type " + std::string(to_string(p.type));
    }
    for (const auto& [key, _] : call.arguments.items()) {
        if (!known.count(key))
            return "unexpected argument '" + key + "'";
    }
    return std::nullopt;
}

ParsedReasoning parse_reasoning(std::string_view raw, const ThinkDelimiters& delimiters) {
    ParsedReasoning out;
    const auto open = raw.find(delimiters.open);
    if (open == std::string_view::npos) {
        const auto close = raw.find(delimiters.close);
        if (close == std::string_view::npos) {
            out.answer = std::string(raw);
            return out;
        }
        out.reasoning = std::string(raw.substr(0, close));
        out.answer = std::string(raw.substr(close + delimiters.close.size()));
        return out;
    }
    const auto body = open + delimiters.open.size();
    const auto close = raw.find(delimiters.close, body);
    if (close == std::string_view::npos) {
        out.reasoning = std::string(raw.substr(body));
        out.unterminated = true;
        return out;
    }
    out.reasoning = std::string(raw.substr(body, close - body));
    out.answer = std::string(raw.substr(close + delimiters.close.size()));
    return out;
}

ModelOutput make_model_output(std::string raw, const ThinkDelimiters& delimiters) {
    auto parsed = parse_reasoning(raw, delimiters);
    ModelOutput out;
    out.reasoning = std::move(parsed.reasoning);
    out.answer = std::move(parsed.answer);
    out.unterminated_reasoning = parsed.unterminated;
    out.raw = std::move(raw);
    return out;
}

std::string render_chat_template(std::span<const ChatMessage> messages) {
    if (messages.empty())
        throw ValidationError("cannot render an empty message list");
    std::string out;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        if (i)
            out += '\n';
        out += kImStart;
        out += to_string(messages[i].role);
        out += '\n';
        out += messages[i].content;
        out += kImEnd;
    }
    return out;
}

std::vector<std::string> lint_chat_template(std::span<const ChatMessage> messages) {
    std::vector<std::string> warnings;
    for (std::size_t i = 0; i < messages.size(); ++i) {
        const auto& c = messages[i].content;
        if (c.find(kImStart) != std::string::npos || c.find(kImEnd) != std::string::npos)
            warnings.push_back("message " + std::to_string(i) + " (" +
                               std::string(to_string(messages[i].role)) +
                               ") contains a chat-template delimiter; rendered verbatim");
    }
    return warnings;
}

json to_json(const DecodeParams& p) {
    json j = json::object();
    if (p.temperature)
        j["temperature"] = *p.temperature;
    if (p.top_p)
        j["top_p"] = *p.top_p;
    if (p.max_tokens)
        j["max_tokens"] = *p.max_tokens;
    if (p.seed)
        j["seed"] = *p.seed;
    return j;
}

DecodeParams decode_params_from_json(const json& j) {
    DecodeParams p;
    if (j.contains("temperature"))
        p.temperature = j["temperature"].get<double>();
    if (j.contains("top_p"))
        p.top_p = j["top_p"].get<double>();
    if (j.contains("max_tokens"))
        p.max_tokens = j["max_tokens"].get<std::size_t>();
    if (j.contains("seed"))
        p.seed = j["seed"].get<unsigned>();
    return p;
}

void BudgetForcingPolicy::validate() const {
    if (max_think_tokens < 1)
        throw ValidationError("max_think_tokens must be >= 1");
    if (max_suppressions < 0)
        throw ValidationError("max_suppressions must be >= 0");
    if (end_of_thinking_delimiter.empty())
        throw ValidationError("end_of_thinking_delimiter must be non-empty");
}

json to_json(const BudgetForcingPolicy& p) {
    return {{"max_think_tokens", p.max_think_tokens},
            {"max_suppressions", p.max_suppressions},
            {"continuation_text", p.continuation_text},
            {"start_of_thinking_delimiter", p.start_of_thinking_delimiter},
            {"end_of_thinking_delimiter", p.end_of_thinking_delimiter},
            {"max_answer_tokens", p.max_answer_tokens}};
}

BudgetForcingPolicy budget_forcing_policy_from_json(const json& j) {
    BudgetForcingPolicy p;
    p.max_think_tokens = j.value("max_think_tokens", p.max_think_tokens);
    p.max_suppressions = j.value("max_suppressions", p.max_suppressions);
    p.continuation_text = j.value("continuation_text", p.continuation_text);
    p.start_of_thinking_delimiter = j.value("start_of_thinking_delimiter", p.start_of_thinking_delimiter);
    p.end_of_thinking_delimiter = j.value("end_of_thinking_delimiter", p.end_of_thinking_delimiter);
    p.max_answer_tokens = j.value("max_answer_tokens", p.max_answer_tokens);
    p.validate();
    return p;
}

BudgetForcedResult budget_forced_generate(CompletionEndpoint& endpoint, const std::string& prompt,
                                          const BudgetForcingPolicy& policy) {
    policy.validate();
    const std::string thinking_prefix = prompt + policy.start_of_thinking_delimiter;
    const std::vector<std::string> stop{policy.end_of_thinking_delimiter};

    BudgetForcedResult result;
    std::string thinking;
    std::size_t completion_tokens = 0;

    while (true) {
        const std::size_t remaining = policy.max_think_tokens - result.thinking_tokens;
        if (remaining == 0) {
            result.forced_end = true;
            break;
        }
        auto step = endpoint.generate(thinking_prefix + thinking, remaining, stop);
        const std::size_t used = std::min(step.token_count, remaining);
        result.thinking_tokens += used;
        completion_tokens += step.token_count;
        thinking += step.text;

        if (step.finish == FinishReason::length) {
            if (result.thinking_tokens >= policy.max_think_tokens) {
                result.forced_end = true;
                break;
            }
            // Stopped short without ending; a zero-token step cannot make
            // progress, so treat it as the model ending its thought.
            if (used > 0)
                continue;
        }
        // The model tried to end its thinking.
        if (result.suppressions < policy.max_suppressions) {
            ++result.suppressions;
            thinking += policy.continuation_text;
            continue;
        }
        break;
    }

    const std::string answer_prompt = thinking_prefix + thinking + policy.end_of_thinking_delimiter;
    auto answer = endpoint.generate(answer_prompt, policy.max_answer_tokens, {});
    completion_tokens += answer.token_count;

    std::string raw = policy.start_of_thinking_delimiter + thinking + policy.end_of_thinking_delimiter + answer.text;
    result.output = make_model_output(std::move(raw), {policy.start_of_thinking_delimiter,
                                                       policy.end_of_thinking_delimiter});
    result.output.token_usage.completion_tokens = completion_tokens;
    return result;
}

BudgetForcedChatEndpoint::BudgetForcedChatEndpoint(CompletionEndpoint& endpoint, BudgetForcingPolicy policy)
    : endpoint_(endpoint), policy_(std::move(policy)) {
    policy_.validate();
}

ModelOutput BudgetForcedChatEndpoint::complete(std::span<const ChatMessage> messages,
                                               std::span<const ToolSchema> tools, const DecodeParams&) {
    if (!tools.empty())
        throw EndpointError(EndpointError::Kind::capability,
                            "budget-forced completion endpoints do not support tools");
    std::string prompt = render_chat_template(messages);
    prompt += '\n';
    prompt += kImStart;
    prompt += "assistant\n";
    return budget_forced_generate(endpoint_, prompt, policy_).output;
}

}  // namespace rar
