// SPDX-License-Identifier: Apache-2.0
#include "rar/service.hpp"

#include <chrono>
#include <filesystem>
#include <random>
#include <regex>

#include "httplib.h"

namespace rar {

namespace {

std::string random_id() {
    static std::mutex mu;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(mu);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(rng()));
    return buf;
}

std::int64_t now_seconds() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

ThreadStore::ThreadStore(std::optional<std::string> snapshot_path) : path_(std::move(snapshot_path)) {
    if (!path_ || !std::filesystem::exists(*path_))
        return;
    json j;
    try {
        j = json::parse(read_file(*path_));
    } catch (const json::exception& e) {
        throw ParseError("thread snapshot " + *path_ + ": " + e.what());
    }
    for (const auto& t : j.at("threads")) {
        auto thread = conversation_thread_from_json(t);
        if (!threads_.emplace(thread.thread_id, thread).second)
            throw ParseError("thread snapshot " + *path_ + " repeats id " + thread.thread_id);
    }
}

std::string ThreadStore::snapshot() const {
    std::shared_lock lock(mutex_);
    json threads = json::array();
    for (const auto& [id, t] : threads_)
        threads.push_back(to_json(t));
    return json{{"version", 1}, {"threads", threads}}.dump(2) + "\n";
}

void ThreadStore::persist_locked() const {
    if (!path_)
        return;
    json threads = json::array();
    for (const auto& [id, t] : threads_)
        threads.push_back(to_json(t));
    write_file_atomic(*path_, json{{"version", 1}, {"threads", threads}}.dump(2) + "\n");
}

std::string ThreadStore::create(std::optional<Demographics> demographics) {
    std::unique_lock lock(mutex_);
    std::string id;
    do
        id = random_id();
    while (threads_.count(id));
    ConversationThread t;
    t.thread_id = id;
    t.demographics = std::move(demographics);
    t.created_at = now_seconds();
    threads_.emplace(id, std::move(t));
    persist_locked();
    return id;
}

std::vector<ConversationThread> ThreadStore::list() const {
    std::shared_lock lock(mutex_);
    std::vector<ConversationThread> out;
    for (const auto& [id, t] : threads_)
        out.push_back(t);
    std::stable_sort(out.begin(), out.end(),
                     [](const auto& a, const auto& b) { return a.created_at < b.created_at; });
    return out;
}

std::optional<ConversationThread> ThreadStore::get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = threads_.find(id);
    if (it == threads_.end())
        return std::nullopt;
    return it->second;
}

bool ThreadStore::set_demographics(const std::string& id, Demographics demographics) {
    std::unique_lock lock(mutex_);
    auto it = threads_.find(id);
    if (it == threads_.end())
        return false;
    it->second.demographics = std::move(demographics);
    persist_locked();
    return true;
}

ThreadStore::TurnLease::TurnLease(TurnLease&& other) noexcept
    : store_(std::exchange(other.store_, nullptr)), id_(std::move(other.id_)) {}

ThreadStore::TurnLease::~TurnLease() {
    if (store_)
        store_->release(id_);
}

void ThreadStore::release(const std::string& id) {
    std::lock_guard lock(busy_mutex_);
    busy_.erase(id);
}

std::variant<ThreadStore::TurnLease, ThreadStore::LeaseError> ThreadStore::begin_turn(const std::string& id) {
    {
        std::shared_lock lock(mutex_);
        if (!threads_.count(id))
            return LeaseError::not_found;
    }
    std::lock_guard lock(busy_mutex_);
    if (!busy_.insert(id).second)
        return LeaseError::busy;
    return TurnLease(this, id);
}

void ThreadStore::commit_turn(const TurnLease& lease, const ConversationThread& updated) {
    std::unique_lock lock(mutex_);
    auto it = threads_.find(lease.thread_id());
    if (it == threads_.end())
        throw ValidationError("thread vanished during turn: " + lease.thread_id());
    it->second.messages = updated.messages;
    it->second.archived = updated.archived;
    persist_locked();
}

std::string_view to_string(ApiErrorCode code) {
    switch (code) {
    case ApiErrorCode::not_found: return "not_found";
    case ApiErrorCode::bad_request: return "bad_request";
    case ApiErrorCode::upstream_failure: return "upstream_failure";
    case ApiErrorCode::conflict: return "conflict";
    }
    return "bad_request";
}

int http_status(ApiErrorCode code) {
    switch (code) {
    case ApiErrorCode::not_found: return 404;
    case ApiErrorCode::bad_request: return 400;
    case ApiErrorCode::upstream_failure: return 502;
    case ApiErrorCode::conflict: return 409;
    }
    return 400;
}

ApiResponse api_ok(json data, int status) {
    return {status, json{{"ok", true}, {"data", std::move(data)}}};
}

ApiResponse api_error(ApiErrorCode code, const std::string& message) {
    return {http_status(code), json{{"ok", false}, {"error", {{"code", to_string(code)}, {"message", message}}}}};
}

TurnRunner make_turn_runner(TurnServices services, TurnConfig config) {
    return [services, config](ConversationThread& thread, const std::string& text) {
        return run_rag_turn(thread, text, services, config);
    };
}

json thread_view(const ConversationThread& t) {
    json messages = json::array();
    auto add = [&](const ChatMessage& m, bool archived) {
        if (m.role == Role::tool)
            return;
        json v{{"role", to_string(m.role)},
               {"content", m.content},
               {"retrieved_titles", m.retrieved_titles},
               {"archived", archived}};
        v["reasoning"] = m.reasoning ? json(*m.reasoning) : json(nullptr);
        messages.push_back(std::move(v));
    };
    for (const auto& m : t.archived)
        add(m, true);
    for (const auto& m : t.messages)
        add(m, false);
    json j{{"thread_id", t.thread_id}, {"created_at", t.created_at}, {"messages", messages}};
    j["demographics"] = t.demographics ? to_json(*t.demographics) : json(nullptr);
    return j;
}

ChatApi::ChatApi(ThreadStore& store, TurnRunner runner) : store_(store), runner_(std::move(runner)) {}

namespace {

std::optional<Demographics> demographics_arg(const json& body) {
    if (!body.is_object() || !body.contains("demographics") || body["demographics"].is_null())
        return std::nullopt;
    return demographics_from_json(body["demographics"]);
}

std::string thread_title(const ConversationThread& t) {
    for (const auto& m : t.full_history())
        if (m.role == Role::user)
            return m.content.size() > 60 ? m.content.substr(0, 57) + "..." : m.content;
    return "";
}

}  // namespace

ApiResponse ChatApi::create_thread(const json& body) {
    try {
        return api_ok({{"thread_id", store_.create(demographics_arg(body))}}, 201);
    } catch (const std::exception& e) {
        return api_error(ApiErrorCode::bad_request, e.what());
    }
}

ApiResponse ChatApi::list_threads() {
    json out = json::array();
    for (const auto& t : store_.list())
        out.push_back({{"thread_id", t.thread_id},
                       {"created_at", t.created_at},
                       {"title", thread_title(t)},
                       {"message_count", t.archived.size() + t.messages.size()}});
    return api_ok(out);
}

ApiResponse ChatApi::get_thread(const std::string& id) {
    auto t = store_.get(id);
    if (!t)
        return api_error(ApiErrorCode::not_found, "no thread " + id);
    return api_ok(thread_view(*t));
}

ApiResponse ChatApi::post_message(const std::string& id, const json& body) {
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string() ||
        trim(body["text"].get<std::string>()).empty())
        return api_error(ApiErrorCode::bad_request, "body must be {\"text\": non-empty string}");

    auto lease = store_.begin_turn(id);
    if (auto* err = std::get_if<ThreadStore::LeaseError>(&lease))
        return *err == ThreadStore::LeaseError::not_found
                   ? api_error(ApiErrorCode::not_found, "no thread " + id)
                   : api_error(ApiErrorCode::conflict, "a reply is already in progress on thread " + id);
    const auto& held = std::get<ThreadStore::TurnLease>(lease);

    auto thread = store_.get(id);
    if (!thread)
        return api_error(ApiErrorCode::not_found, "no thread " + id);
    TurnResult turn;
    try {
        turn = runner_(*thread, body["text"].get<std::string>());
    } catch (const ValidationError& e) {
        return api_error(ApiErrorCode::bad_request, e.what());
    } catch (const std::exception& e) {
        return api_error(ApiErrorCode::upstream_failure, e.what());
    }
    store_.commit_turn(held, *thread);

    json data{{"answer", turn.reply.answer}, {"retrieved_titles", turn.retrieved_titles}};
    data["reasoning"] = turn.reply.reasoning ? json(*turn.reply.reasoning) : json(nullptr);
    if (turn.trim_warning)
        data["warning"] = *turn.trim_warning;
    return api_ok(data);
}

ApiResponse ChatApi::put_demographics(const std::string& id, const json& body) {
    Demographics d;
    try {
        d = demographics_from_json(body.is_object() && body.contains("demographics") ? body["demographics"] : body);
    } catch (const std::exception& e) {
        return api_error(ApiErrorCode::bad_request, e.what());
    }
    if (!store_.set_demographics(id, std::move(d)))
        return api_error(ApiErrorCode::not_found, "no thread " + id);
    return get_thread(id);
}

ApiResponse ChatApi::handle(const std::string& method, const std::string& path, const std::string& body) {
    static const std::regex thread_re(R"(^/threads/([A-Za-z0-9_-]+)$)");
    static const std::regex messages_re(R"(^/threads/([A-Za-z0-9_-]+)/messages$)");
    static const std::regex demographics_re(R"(^/threads/([A-Za-z0-9_-]+)/demographics$)");

    json parsed = json::object();
    if (!trim(body).empty()) {
        try {
            parsed = json::parse(body);
        } catch (const json::exception& e) {
            return api_error(ApiErrorCode::bad_request, std::string("invalid JSON body: ") + e.what());
        }
    }

    std::smatch m;
    if (path == "/threads") {
        if (method == "POST")
            return create_thread(parsed);
        if (method == "GET")
            return list_threads();
    } else if (std::regex_match(path, m, messages_re)) {
        if (method == "POST")
            return post_message(m[1].str(), parsed);
    } else if (std::regex_match(path, m, demographics_re)) {
        if (method == "PUT")
            return put_demographics(m[1].str(), parsed);
    } else if (std::regex_match(path, m, thread_re)) {
        if (method == "GET")
            return get_thread(m[1].str());
    } else {
        return api_error(ApiErrorCode::not_found, "no route " + path);
    }
    return api_error(ApiErrorCode::bad_request, method + " not allowed on " + path);
}

struct HttpServer::Impl {
    Impl(ChatApi& a, AuthHook h) : api(a), auth(std::move(h)) {}

    ChatApi& api;
    AuthHook auth;
    httplib::Server server;
    std::string host;
    int port = 0;
};

HttpServer::HttpServer(ChatApi& api, AuthHook auth) : impl_(std::make_unique<Impl>(api, std::move(auth))) {
    auto& srv = impl_->server;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type, Authorization"}});
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
        if (impl_->auth &&
            !impl_->auth(req.method, req.path,
                         std::multimap<std::string, std::string>(req.headers.begin(), req.headers.end()))) {
            res.status = 401;
            res.set_content(json{{"ok", false}, {"error", {{"code", "unauthorized"}, {"message", "unauthorized"}}}}.dump(),
                            "application/json");
            return;
        }
        auto out = impl_->api.handle(req.method, req.path, req.body);
        res.status = out.status;
        res.set_content(out.body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
    };
    srv.Get(R"(.*)", route);
    srv.Post(R"(.*)", route);
    srv.Put(R"(.*)", route);
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

HttpServer::~HttpServer() {
    stop();
}

int HttpServer::bind(const std::string& host, int port) {
    impl_->host = host;
    if (port == 0)
        impl_->port = impl_->server.bind_to_any_port(host);
    else if (impl_->server.bind_to_port(host, port))
        impl_->port = port;
    else
        impl_->port = -1;
    if (impl_->port <= 0)
        throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return impl_->port;
}

void HttpServer::listen() {
    impl_->server.listen_after_bind();
}

void HttpServer::stop() {
    if (impl_->server.is_running())
        impl_->server.stop();
}

void HttpServer::wait_until_ready() const {
    impl_->server.wait_until_ready();
}

}  // namespace rar
