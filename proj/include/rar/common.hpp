// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

namespace rar {

using json = nlohmann::json;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class EndpointError : public Error {
public:
    enum class Kind { transport, status, schema, capability };

    EndpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Substitutes `{key}` placeholders. Braces that do not name a key are left
/// untouched, so JSON examples embedded in a template survive verbatim.
std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Returns the names of any `{key}` placeholders from `keys` still present.
std::vector<std::string> unresolved_placeholders(std::string_view text,
                                                 const std::vector<std::string>& keys);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);

std::string read_file(const std::string& path);
/// Writes through a temp file and renames it into place.
void write_file_atomic(const std::string& path, std::string_view content);

/// Runs `fn(i)` for i in [0, n) on at most `width` threads. The first
/// exception thrown by any task is rethrown after all workers have joined.
void parallel_for(std::size_t n, std::size_t width, const std::function<void(std::size_t)>& fn);

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{500};
};

/// Calls `fn` up to `policy.attempts` times, doubling the delay after each
/// failure. Rethrows the last error.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
    auto delay = policy.base_delay;
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const std::exception&) {
            if (attempt >= policy.attempts)
                throw;
            if (delay.count() > 0)
                std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }
}

/// Reads a line-delimited JSON file; blank lines are skipped. Errors carry
/// the 1-based line number.
std::vector<json> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<json>& rows);

}  // namespace rar
