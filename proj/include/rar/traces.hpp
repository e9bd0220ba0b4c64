// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reasoning-trace training examples and the fine-tuning bundle export.

#include <optional>
#include <string>
#include <vector>

#include "rar/retrieval.hpp"
#include "rar/synth.hpp"

namespace rar {

/// "Title: ...\nSimilarity score: ...\nContent: ..." blocks separated by blank
/// lines.
std::string render_context(const std::vector<RetrievalResult>& retrieved);
/// JSON-style list of retrieved titles: ["a", "b"].
std::string render_sources(const std::vector<RetrievalResult>& retrieved);

std::string build_trace_prompt(const SyntheticQuery& query, const std::vector<RetrievalResult>& retrieved);

struct TraceExample {
    SyntheticQuery query;
    std::vector<RetrievalResult> retrieved;
    std::string reasoning;
    std::string final_answer;
    std::string concatenated_text;
    std::size_t token_length = 0;
};

json to_json(const TraceExample& t);
TraceExample trace_example_from_json(const json& j);
std::vector<TraceExample> load_traces(const std::string& path);
void write_traces(const std::string& path, const std::vector<TraceExample>& traces);

/// Chat-template rendering of the prompt as the user turn and the
/// think-delimited reasoning plus answer as the assistant turn.
std::string concatenate_trace(const std::string& prompt, const std::string& reasoning,
                              const std::string& answer, const ThinkDelimiters& delimiters = {});

/// Builds the example. Returns nullopt (with `why` set) when the teacher gave
/// no answer or no reasoning.
std::optional<TraceExample> assemble_trace(const SyntheticQuery& query,
                                           const std::vector<RetrievalResult>& retrieved,
                                           const ModelOutput& teacher_output, const Tokenizer& tokenizer,
                                           std::string* why = nullptr);

struct TraceGenerationOptions {
    std::size_t k = 5;
    RetryPolicy retry;
    std::size_t parallelism = 4;
    /// Re-ask the teacher this many extra times on an empty/refused answer.
    int retry_on_empty = 0;
};

struct TraceGenerationResult {
    std::vector<TraceExample> examples;
    std::vector<std::pair<std::size_t, std::string>> excluded;
};

/// Retrieves k summaries per query, asks the teacher, and assembles traces.
TraceGenerationResult generate_traces(const std::vector<SyntheticQuery>& queries, const VectorIndex& index,
                                      EmbeddingProvider& provider, const std::vector<CorpusRecord>& records,
                                      ChatEndpoint& teacher, const Tokenizer& tokenizer,
                                      const TraceGenerationOptions& options = {});

struct DatasetStats {
    std::size_t count = 0;
    double mean_token_length = 0.0;
    std::size_t min_token_length = 0;
    std::size_t max_token_length = 0;
    /// (bucket lower bound, count), bucket width `histogram_bucket`.
    std::vector<std::pair<std::size_t, std::size_t>> histogram;
    std::size_t histogram_bucket = 1024;
    /// Set when `count == 0`: mean/min/max carry no meaning.
    bool undefined = false;
};

json to_json(const DatasetStats& s);
DatasetStats dataset_stats(const std::vector<TraceExample>& examples, std::size_t bucket_width = 1024);

/// Fine-tuning hyperparameters. Defaults are the values the bundle ships.
struct TrainingConfig {
    int epochs = 5;
    double learning_rate = 1e-5;
    std::string schedule = "cosine";
    int per_device_batch = 1;
    std::string precision = "bf16";
    std::size_t block_size = 32768;
    std::string sharding = "full_shard auto_wrap";
    bool gradient_checkpointing = true;
    std::string optimizer = "adam-with-weight-decay";
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    int eval_every_steps = 50;

    bool operator==(const TrainingConfig&) const = default;
};

json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const json& j);

struct TrainingBundle {
    std::string examples_file;
    std::string config_file;
    std::string stats_file;
    TrainingConfig config;
    DatasetStats stats;
    std::vector<std::string> warnings;
};

/// Writes examples.jsonl, config.json and stats.json into `out_dir`.
TrainingBundle export_training_bundle(const std::vector<TraceExample>& examples, const std::string& out_dir,
                                      const TrainingConfig& config = {});

/// Reads back the `text` field of every exported example, in order.
std::vector<std::string> load_bundle_texts(const std::string& examples_file);

}  // namespace rar
