// SPDX-License-Identifier: Apache-2.0
#pragma once

// Condition/disposition prediction: prompts, answer parsing, scoring and the
// multi-run evaluation harness.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rar/llm.hpp"
#include "rar/retrieval.hpp"
#include "rar/synth.hpp"

namespace rar {

inline constexpr std::string_view kInconclusive = "inconclusive";
inline constexpr std::string_view kRecommendationTool = "submit_condition_recommendation";

enum class PredictionMode { tool, text };

std::string_view to_string(PredictionMode m);
PredictionMode parse_prediction_mode(std::string_view s);

struct Prediction {
    std::string condition;
    Disposition disposition = Disposition::self_care;
    /// Condition matched neither the allowed list nor "inconclusive". Such
    /// predictions always score as incorrect.
    bool unknown_condition = false;

    bool operator==(const Prediction&) const = default;
};

/// "(condition, Severity)" with the canonical severity display string.
std::string format_prediction(const Prediction& p);

struct PredictionPrompt {
    std::string system;
    std::string user;
    std::optional<std::vector<ToolSchema>> tools;
};

ToolSchema recommendation_tool();

/// Exactly one of `context` (retrieval run) or `all_conditions` (no-retrieval
/// baseline) must be supplied.
PredictionPrompt build_prediction_prompt(PredictionMode mode,
                                         const std::optional<std::vector<RetrievalResult>>& context,
                                         const SyntheticQuery& query,
                                         const std::optional<std::vector<std::string>>& all_conditions);

/// Lower case, trimmed, with '-', '_' and runs of whitespace folded to one space.
std::string normalize_condition(std::string_view s);

/// Parses the last "(condition, severity)" pair, looking in the answer after
/// the end-of-thinking delimiter first and then in the whole text. Throws
/// ParseError when no pair or no valid severity is found.
Prediction parse_text_prediction(const std::string& raw, const std::vector<std::string>& allowed_conditions,
                                 const ThinkDelimiters& delimiters = {});

/// Reads the recommendation tool call; falls back to text parsing of the
/// answer when the model replied without calling the tool.
Prediction parse_tool_prediction(const ModelOutput& output, const std::vector<std::string>& allowed_conditions,
                                 const ThinkDelimiters& delimiters = {});

struct TypeAccuracy {
    std::size_t n = 0;
    double condition_accuracy = 0.0;
    double disposition_accuracy = 0.0;
};

struct EvalRunReport {
    double condition_accuracy = 0.0;
    double disposition_accuracy = 0.0;
    std::map<QueryType, TypeAccuracy> per_query_type;
    std::size_t n = 0;
    std::size_t parse_failures = 0;
    std::size_t unknown_conditions = 0;
    /// Predicted severity below the gold severity.
    std::size_t underestimations = 0;
    std::size_t overestimations = 0;
};

json to_json(const EvalRunReport& r);

/// `nullopt` entries are parse failures and score incorrect on both axes.
EvalRunReport score_run(const std::vector<std::optional<Prediction>>& predictions,
                        const std::vector<SyntheticQuery>& gold);

struct AggregateReport {
    std::size_t runs = 0;
    double mean_condition = 0.0;
    double mean_disposition = 0.0;
    double std_condition = 0.0;
    double std_disposition = 0.0;
    bool single_run = false;
};

json to_json(const AggregateReport& r);

/// Means and unbiased sample standard deviations across runs.
AggregateReport aggregate_runs(const std::vector<EvalRunReport>& reports);

/// Bytes needed to hold the weights at 16-bit precision.
std::uint64_t estimate_model_memory(std::uint64_t param_count);

struct AccuracyRow {
    std::string label;
    AggregateReport aggregate;
};

/// Model | Condition | Disposition, mean with std in brackets.
std::string format_accuracy_table(const std::vector<AccuracyRow>& rows);

struct QueryTypeRow {
    std::string label;
    EvalRunReport report;
};

/// One row per model with condition and disposition accuracy for each query
/// type.
std::string format_query_type_table(const std::vector<QueryTypeRow>& rows);

struct MemoryRow {
    std::string model;
    std::uint64_t param_count = 0;
};

/// Model | Parameters | Memory (GB), with GB = 1e9 bytes.
std::string format_memory_table(const std::vector<MemoryRow>& rows);

struct EvalConfig {
    PredictionMode mode = PredictionMode::text;
    /// Retrieve `k` documents per query; when false the full condition list is
    /// given instead.
    bool use_retrieval = true;
    std::size_t k = 5;
    std::size_t runs = 1;
    std::size_t parallelism = 4;
    RetryPolicy retry;
    DecodeParams decode;
    ThinkDelimiters delimiters;
};

json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const json& j);

struct EvalRun {
    EvalRunReport report;
    std::vector<std::optional<Prediction>> predictions;
    std::vector<std::string> raw_answers;
    std::size_t endpoint_failures = 0;
};

struct EvalResult {
    std::vector<EvalRun> runs;
    AggregateReport aggregate;
    /// Retrieval mode only: fraction of queries whose gold title was among
    /// the retrieved documents.
    std::optional<double> p_at_k;
    /// Retrieval mode only: every run's condition accuracy <= p_at_k.
    bool ceiling_holds = true;
};

json to_json(const EvalResult& r);

/// Retrieval is computed once per query and reused across runs. Endpoint
/// errors after retries count as parse failures.
EvalResult run_prediction_eval(const std::vector<SyntheticQuery>& queries, const std::vector<CorpusRecord>& records,
                               const VectorIndex* index, EmbeddingProvider* provider, ChatEndpoint& reasoner,
                               const EvalConfig& config);

}  // namespace rar
