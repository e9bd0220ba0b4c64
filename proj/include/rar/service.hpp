// SPDX-License-Identifier: Apache-2.0
#pragma once

// Conversation store and the REST API over it.

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "rar/orchestrator.hpp"

namespace rar {

/// Thread-safe map of conversation threads with an optional file snapshot.
/// Every mutation rewrites the snapshot atomically.
class ThreadStore {
public:
    explicit ThreadStore(std::optional<std::string> snapshot_path = std::nullopt);

    std::string create(std::optional<Demographics> demographics);
    std::vector<ConversationThread> list() const;
    std::optional<ConversationThread> get(const std::string& id) const;
    bool set_demographics(const std::string& id, Demographics demographics);

    /// Held for the duration of one turn on one thread.
    class TurnLease {
    public:
        TurnLease(TurnLease&& other) noexcept;
        TurnLease& operator=(TurnLease&&) = delete;
        ~TurnLease();

        const std::string& thread_id() const { return id_; }

    private:
        friend class ThreadStore;
        TurnLease(ThreadStore* store, std::string id) : store_(store), id_(std::move(id)) {}

        ThreadStore* store_;
        std::string id_;
    };

    enum class LeaseError { not_found, busy };

    /// Claims the thread for a turn; fails when it is unknown or already busy.
    std::variant<TurnLease, LeaseError> begin_turn(const std::string& id);

    /// Stores the turn's message window and archive. Demographics changed
    /// concurrently are preserved.
    void commit_turn(const TurnLease& lease, const ConversationThread& updated);

    /// Threads sorted by id, pretty-printed; identical state gives identical
    /// bytes.
    std::string snapshot() const;

private:
    void persist_locked() const;
    void release(const std::string& id);

    std::optional<std::string> path_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, ConversationThread> threads_;
    std::mutex busy_mutex_;
    std::set<std::string> busy_;
};

enum class ApiErrorCode { not_found, bad_request, upstream_failure, conflict };

std::string_view to_string(ApiErrorCode code);
int http_status(ApiErrorCode code);

struct ApiResponse {
    int status = 200;
    json body;
};

ApiResponse api_ok(json data, int status = 200);
ApiResponse api_error(ApiErrorCode code, const std::string& message);

/// Executes one orchestrator turn on a thread copy.
using TurnRunner = std::function<TurnResult(ConversationThread&, const std::string&)>;

TurnRunner make_turn_runner(TurnServices services, TurnConfig config);

/// Display view of a thread: archived and live messages in order, each with
/// its reasoning and retrieved titles.
json thread_view(const ConversationThread& t);

/// REST routing independent of the HTTP transport.
class ChatApi {
public:
    ChatApi(ThreadStore& store, TurnRunner runner);

    ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

    ApiResponse create_thread(const json& body);
    ApiResponse list_threads();
    ApiResponse get_thread(const std::string& id);
    ApiResponse post_message(const std::string& id, const json& body);
    ApiResponse put_demographics(const std::string& id, const json& body);

private:
    ThreadStore& store_;
    TurnRunner runner_;
};

/// Request gate run before routing. Returning false answers 401. No hook is
/// installed by default.
using AuthHook = std::function<bool(const std::string& method, const std::string& path,
                                    const std::multimap<std::string, std::string>& headers)>;

class HttpServer {
public:
    explicit HttpServer(ChatApi& api, AuthHook auth = {});
    ~HttpServer();

    /// Binds `host:port`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace rar
