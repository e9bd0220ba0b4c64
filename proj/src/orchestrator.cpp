// SPDX-License-Identifier: Apache-2.0
#include "rar/orchestrator.hpp"

#include <algorithm>

#include "rar/prompts.hpp"
#include "rar/traces.hpp"

namespace rar {

namespace {

constexpr std::string_view kFallbackReply =
    "Sorry, I could not work out how to help with that. Could you tell me more about your symptoms?";

}  // namespace

void ConversationThread::validate() const {
    if (thread_id.empty())
        throw ValidationError("thread id is empty");
    for (std::size_t i = 0; i < messages.size(); ++i) {
        messages[i].validate();
        if (messages[i].role == Role::system && i != 0)
            throw ValidationError("system message must come first in thread " + thread_id);
    }
}

std::vector<ChatMessage> ConversationThread::full_history() const {
    std::vector<ChatMessage> out = archived;
    out.insert(out.end(), messages.begin(), messages.end());
    return out;
}

json to_json(const ConversationThread& t) {
    json messages = json::array();
    for (const auto& m : t.messages)
        messages.push_back(to_json(m));
    json archived = json::array();
    for (const auto& m : t.archived)
        archived.push_back(to_json(m));
    json j{{"thread_id", t.thread_id}, {"created_at", t.created_at}, {"messages", messages}, {"archived", archived}};
    j["demographics"] = t.demographics ? to_json(*t.demographics) : json(nullptr);
    return j;
}

ConversationThread conversation_thread_from_json(const json& j) {
    ConversationThread t;
    t.thread_id = j.at("thread_id").get<std::string>();
    t.created_at = j.value("created_at", std::int64_t{0});
    for (const auto& m : j.at("messages"))
        t.messages.push_back(chat_message_from_json(m));
    if (j.contains("archived"))
        for (const auto& m : j["archived"])
            t.archived.push_back(chat_message_from_json(m));
    if (j.contains("demographics") && !j["demographics"].is_null())
        t.demographics = demographics_from_json(j["demographics"]);
    t.validate();
    return t;
}

json to_json(const TrimPolicy& p) {
    return {{"max_history_tokens", p.max_history_tokens}, {"protect_system", p.protect_system}};
}

TrimPolicy trim_policy_from_json(const json& j) {
    TrimPolicy p;
    p.max_history_tokens = j.value("max_history_tokens", p.max_history_tokens);
    if (!j.value("protect_system", true))
        throw ValidationError("trim policy must protect the system message");
    return p;
}

std::size_t message_tokens(const ChatMessage& m, const Tokenizer& tokenizer) {
    return tokenizer.count(m.content);
}

TrimResult trim_history(const std::vector<ChatMessage>& messages, const TrimPolicy& policy,
                        const Tokenizer& tokenizer) {
    TrimResult out;
    std::vector<std::size_t> cost;
    std::size_t total = 0;
    for (const auto& m : messages) {
        cost.push_back(message_tokens(m, tokenizer));
        total += cost.back();
    }
    std::vector<bool> drop(messages.size(), false);
    for (std::size_t i = 0; i < messages.size() && total > policy.max_history_tokens; ++i) {
        if (messages[i].role == Role::system)
            continue;
        drop[i] = true;
        total -= cost[i];
    }
    for (std::size_t i = 0; i < messages.size(); ++i)
        (drop[i] ? out.evicted : out.kept).push_back(messages[i]);
    if (total > policy.max_history_tokens)
        out.warning = "system message alone (" + std::to_string(total) + " tokens) exceeds the history budget of " +
                      std::to_string(policy.max_history_tokens);
    return out;
}

ToolSchema retriever_tool() {
    return {"retrieve_condition_context",
            "Search the NHS condition knowledge base for pages relevant to the patient's symptoms.",
            {{"query", ParamType::string, true,
              "A standalone search query describing the symptoms, rewritten from the conversation."}}};
}

namespace {

std::vector<ChatMessage> without_system(const std::vector<ChatMessage>& messages) {
    std::vector<ChatMessage> out;
    for (const auto& m : messages) {
        if (m.role == Role::system)
            continue;
        ChatMessage copy = m;
        copy.reasoning.reset();
        copy.retrieved_titles.clear();
        out.push_back(std::move(copy));
    }
    return out;
}

// Returns an error description when the agent output is not a usable
// decision.
std::optional<std::string> check_agent_output(const ModelOutput& out, const ToolSchema& tool) {
    if (out.tool_calls.empty())
        return trim(out.answer).empty() ? std::optional<std::string>("empty reply without a tool call")
                                        : std::nullopt;
    const ToolCall& call = out.tool_calls.front();
    const ToolSchema tools[] = {tool};
    if (auto err = validate_tool_call(call, tools))
        return err;
    const auto& q = call.arguments.at("query");
    if (!q.is_string() || trim(q.get<std::string>()).empty())
        return std::string("argument \"query\" must be a non-empty string");
    return std::nullopt;
}

}  // namespace

AgentDecision decide_action(const std::vector<ChatMessage>& history, ChatEndpoint& agent, const ToolSchema& tool) {
    if (std::none_of(history.begin(), history.end(), [](const ChatMessage& m) { return m.role == Role::user; }))
        throw ValidationError("decide_action needs at least one user message");

    std::vector<ChatMessage> messages{ChatMessage::system(std::string(prompts::kAgentSystem))};
    for (auto& m : without_system(history))
        messages.push_back(std::move(m));
    const std::vector<ToolSchema> tools{tool};

    for (int attempt = 0; attempt < 2; ++attempt) {
        ModelOutput out = agent.complete(messages, tools, DecodeParams{});
        auto err = check_agent_output(out, tool);
        if (!err) {
            if (out.tool_calls.empty())
                return DirectReply{trim(out.answer)};
            return RetrieveDecision{trim(out.tool_calls.front().arguments.at("query").get<std::string>())};
        }
        if (attempt == 1)
            break;
        ChatMessage call_msg = ChatMessage::assistant(out.answer);
        call_msg.tool_calls = out.tool_calls;
        ChatMessage error_msg;
        if (!out.tool_calls.empty()) {
            messages.push_back(std::move(call_msg));
            error_msg.role = Role::tool;
            error_msg.tool_call_id = out.tool_calls.front().call_id;
        } else {
            error_msg.role = Role::user;
        }
        error_msg.content = json{{"error", *err}, {"expected_tool", tool.name}}.dump();
        messages.push_back(std::move(error_msg));
    }
    return DirectReply{std::string(kFallbackReply)};
}

json to_json(const TurnConfig& c) {
    return {{"k", c.k},
            {"trim", to_json(c.trim)},
            {"agent_decode", to_json(c.agent_decode)},
            {"reasoner_decode", to_json(c.reasoner_decode)}};
}

TurnConfig turn_config_from_json(const json& j) {
    TurnConfig c;
    c.k = j.value("k", c.k);
    if (j.contains("trim"))
        c.trim = trim_policy_from_json(j["trim"]);
    if (j.contains("agent_decode"))
        c.agent_decode = decode_params_from_json(j["agent_decode"]);
    if (j.contains("reasoner_decode"))
        c.reasoner_decode = decode_params_from_json(j["reasoner_decode"]);
    if (c.k == 0)
        throw ValidationError("turn config k must be >= 1");
    return c;
}

std::string render_rag_system_prompt(const std::vector<RetrievalResult>& retrieved,
                                     const std::optional<Demographics>& demographics) {
    return fill_template(prompts::kRagSystem,
                         {{"context", render_context(retrieved)},
                          {"demographics", demographics ? render_demographics(*demographics) : "Not provided"}});
}

TurnResult run_rag_turn(ConversationThread& thread, const std::string& user_msg, TurnServices services,
                        const TurnConfig& config) {
    if (trim(user_msg).empty())
        throw ValidationError("message text is empty");

    ConversationThread work = thread;
    work.messages.push_back(ChatMessage::user(user_msg));
    auto trimmed = trim_history(work.messages, config.trim, services.tokenizer);
    work.archived.insert(work.archived.end(), trimmed.evicted.begin(), trimmed.evicted.end());
    work.messages = std::move(trimmed.kept);

    TurnResult result;
    result.trim_warning = trimmed.warning;
    const auto decision = decide_action(work.messages, services.agent);

    ChatMessage reply;
    if (const auto* r = std::get_if<RetrieveDecision>(&decision)) {
        const auto hits = retrieve(r->query, services.index, services.provider, services.records, config.k);
        std::vector<ChatMessage> model_messages{
            ChatMessage::system(render_rag_system_prompt(hits, work.demographics))};
        for (auto& m : without_system(work.messages))
            model_messages.push_back(std::move(m));
        result.reply = services.reasoner.complete(model_messages, {}, config.reasoner_decode);
        result.retrieved = true;
        for (const auto& h : hits)
            result.retrieved_titles.push_back(h.doc_title);
        reply = ChatMessage::assistant(result.reply.answer);
        reply.reasoning = result.reply.reasoning;
        reply.retrieved_titles = result.retrieved_titles;
    } else {
        const auto& text = std::get<DirectReply>(decision).text;
        result.reply = make_model_output(text);
        reply = ChatMessage::assistant(result.reply.answer);
        reply.reasoning = result.reply.reasoning;
    }
    work.messages.push_back(std::move(reply));
    thread = std::move(work);
    return result;
}

}  // namespace rar
