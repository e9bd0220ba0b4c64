// SPDX-License-Identifier: Apache-2.0
#include "rar/traces.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "rar/prompts.hpp"

namespace rar {

namespace {

std::string format_score(float score) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", static_cast<double>(score));
    return buf;
}

}  // namespace

std::string render_context(const std::vector<RetrievalResult>& retrieved) {
    std::string out;
    for (std::size_t i = 0; i < retrieved.size(); ++i) {
        if (i)
            out += "\n\n";
        out += "Title: " + retrieved[i].doc_title + "\n";
        out += "Similarity score: " + format_score(retrieved[i].best_score) + "\n";
        out += "Content: " + retrieved[i].payload;
    }
    return out;
}

std::string render_sources(const std::vector<RetrievalResult>& retrieved) {
    json titles = json::array();
    for (const auto& r : retrieved)
        titles.push_back(r.doc_title);
    return titles.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string build_trace_prompt(const SyntheticQuery& query, const std::vector<RetrievalResult>& retrieved) {
    if (retrieved.empty())
        throw ValidationError("trace prompt needs at least one retrieved document");
    std::string prompt = fill_template(prompts::kReasoningTrace,
                                       {{"context", render_context(retrieved)},
                                        {"question", query.symptoms_description},
                                        {"demographics", render_demographics(query.demographics)},
                                        {"sources", render_sources(retrieved)}});
    // The template text itself must be fully resolved; check it with empty
    // fills so user content containing braces does not trip the scan.
    const std::string skeleton =
        fill_template(prompts::kReasoningTrace, {{"context", ""}, {"question", ""}, {"demographics", ""}, {"sources", ""}});
    if (auto left = unresolved_placeholders(skeleton, {"context", "question", "demographics", "sources"}); !left.empty())
        throw ValidationError("unresolved placeholder {" + left.front() + "} in trace prompt");
    return prompt;
}

json to_json(const TraceExample& t) {
    json retrieved = json::array();
    for (const auto& r : t.retrieved)
        retrieved.push_back(to_json(r));
    return {{"query", to_json(t.query)},
            {"retrieved", retrieved},
            {"reasoning", t.reasoning},
            {"final_answer", t.final_answer},
            {"concatenated_text", t.concatenated_text},
            {"token_length", t.token_length}};
}

TraceExample trace_example_from_json(const json& j) {
    TraceExample t;
    t.query = synthetic_query_from_json(j.at("query"));
    for (const auto& r : j.at("retrieved"))
        t.retrieved.push_back(retrieval_result_from_json(r));
    t.reasoning = j.at("reasoning").get<std::string>();
    t.final_answer = j.at("final_answer").get<std::string>();
    t.concatenated_text = j.at("concatenated_text").get<std::string>();
    t.token_length = j.at("token_length").get<std::size_t>();
    return t;
}

std::vector<TraceExample> load_traces(const std::string& path) {
    std::vector<TraceExample> out;
    for (const auto& row : read_jsonl(path))
        out.push_back(trace_example_from_json(row));
    return out;
}

void write_traces(const std::string& path, const std::vector<TraceExample>& traces) {
    std::vector<json> rows;
    rows.reserve(traces.size());
    for (const auto& t : traces)
        rows.push_back(to_json(t));
    write_jsonl(path, rows);
}

std::string concatenate_trace(const std::string& prompt, const std::string& reasoning, const std::string& answer,
                              const ThinkDelimiters& delimiters) {
    const std::vector<ChatMessage> turns{
        ChatMessage::user(prompt),
        ChatMessage::assistant(delimiters.open + reasoning + delimiters.close + answer)};
    return render_chat_template(turns);
}

std::optional<TraceExample> assemble_trace(const SyntheticQuery& query, const std::vector<RetrievalResult>& retrieved,
                                           const ModelOutput& teacher_output, const Tokenizer& tokenizer,
                                           std::string* why) {
    auto reject = [&](std::string reason) -> std::optional<TraceExample> {
        if (why)
            *why = std::move(reason);
        return std::nullopt;
    };
    const std::string answer = trim(teacher_output.answer);
    if (answer.empty())
        return reject("teacher returned an empty answer");
    if (!teacher_output.reasoning || trim(*teacher_output.reasoning).empty())
        return reject("teacher returned no reasoning");
    if (teacher_output.unterminated_reasoning)
        return reject("teacher reasoning is unterminated");

    TraceExample t;
    t.query = query;
    t.retrieved = retrieved;
    t.reasoning = trim(*teacher_output.reasoning);
    t.final_answer = answer;
    t.concatenated_text = concatenate_trace(build_trace_prompt(query, retrieved), t.reasoning, t.final_answer);
    t.token_length = tokenizer.count(t.concatenated_text);
    return t;
}

TraceGenerationResult generate_traces(const std::vector<SyntheticQuery>& queries, const VectorIndex& index,
                                      EmbeddingProvider& provider, const std::vector<CorpusRecord>& records,
                                      ChatEndpoint& teacher, const Tokenizer& tokenizer,
                                      const TraceGenerationOptions& options) {
    std::vector<std::optional<TraceExample>> slots(queries.size());
    std::vector<std::string> reasons(queries.size());

    parallel_for(queries.size(), options.parallelism, [&](std::size_t i) {
        const auto& q = queries[i];
        try {
            const auto retrieved = retrieve(q.symptoms_description, index, provider, records, options.k);
            const std::vector<ChatMessage> messages{ChatMessage::user(build_trace_prompt(q, retrieved))};
            for (int attempt = 0; attempt <= options.retry_on_empty; ++attempt) {
                auto output = with_retries(options.retry, [&] { return teacher.complete(messages); });
                slots[i] = assemble_trace(q, retrieved, output, tokenizer, &reasons[i]);
                if (slots[i])
                    break;
            }
        } catch (const std::exception& e) {
            reasons[i] = e.what();
        }
    });

    TraceGenerationResult result;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i])
            result.examples.push_back(std::move(*slots[i]));
        else
            result.excluded.emplace_back(i, reasons[i]);
    }
    return result;
}

json to_json(const DatasetStats& s) {
    json hist = json::array();
    for (auto [bucket, n] : s.histogram)
        hist.push_back({{"bucket", bucket}, {"count", n}});
    return {{"count", s.count},
            {"mean_token_length", s.mean_token_length},
            {"min_token_length", s.min_token_length},
            {"max_token_length", s.max_token_length},
            {"histogram_bucket", s.histogram_bucket},
            {"histogram", hist},
            {"undefined", s.undefined}};
}

DatasetStats dataset_stats(const std::vector<TraceExample>& examples, std::size_t bucket_width) {
    DatasetStats s;
    s.histogram_bucket = std::max<std::size_t>(bucket_width, 1);
    s.count = examples.size();
    if (examples.empty()) {
        s.undefined = true;
        return s;
    }
    std::map<std::size_t, std::size_t> buckets;
    std::size_t total = 0;
    s.min_token_length = examples.front().token_length;
    for (const auto& e : examples) {
        total += e.token_length;
        s.min_token_length = std::min(s.min_token_length, e.token_length);
        s.max_token_length = std::max(s.max_token_length, e.token_length);
        ++buckets[e.token_length / s.histogram_bucket * s.histogram_bucket];
    }
    s.mean_token_length = static_cast<double>(total) / static_cast<double>(examples.size());
    s.histogram.assign(buckets.begin(), buckets.end());
    return s;
}

json to_json(const TrainingConfig& c) {
    return {{"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"schedule", c.schedule},
            {"per_device_batch", c.per_device_batch},
            {"precision", c.precision},
            {"block_size", c.block_size},
            {"sharding", c.sharding},
            {"gradient_checkpointing", c.gradient_checkpointing},
            {"optimizer", c.optimizer},
            {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"eval_every_steps", c.eval_every_steps}};
}

TrainingConfig training_config_from_json(const json& j) {
    TrainingConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.schedule = j.at("schedule").get<std::string>();
    c.per_device_batch = j.at("per_device_batch").get<int>();
    c.precision = j.at("precision").get<std::string>();
    c.block_size = j.at("block_size").get<std::size_t>();
    c.sharding = j.at("sharding").get<std::string>();
    c.gradient_checkpointing = j.at("gradient_checkpointing").get<bool>();
    c.optimizer = j.at("optimizer").get<std::string>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eval_every_steps = j.at("eval_every_steps").get<int>();
    return c;
}

TrainingBundle export_training_bundle(const std::vector<TraceExample>& examples, const std::string& out_dir,
                                      const TrainingConfig& config) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        throw IoError("cannot create bundle directory " + out_dir + ": " + ec.message());

    TrainingBundle bundle;
    bundle.config = config;
    bundle.examples_file = (fs::path(out_dir) / "examples.jsonl").string();
    bundle.config_file = (fs::path(out_dir) / "config.json").string();
    bundle.stats_file = (fs::path(out_dir) / "stats.json").string();
    bundle.stats = dataset_stats(examples);

    std::vector<json> rows;
    rows.reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& e = examples[i];
        if (e.token_length > config.block_size)
            bundle.warnings.push_back("example " + std::to_string(i) + " has " + std::to_string(e.token_length) +
                                      " tokens, exceeding block_size " + std::to_string(config.block_size) +
                                      "; it will be truncated during training");
        json retrieved = json::array();
        for (const auto& r : e.retrieved)
            retrieved.push_back({{"title", r.doc_title}, {"score", r.best_score}});
        rows.push_back({{"text", e.concatenated_text},
                        {"condition_title", e.query.condition_title},
                        {"query_type", to_string(e.query.query_type)},
                        {"disposition", display_name(e.query.disposition)},
                        {"final_answer", e.final_answer},
                        {"token_length", e.token_length},
                        {"retrieved", retrieved}});
    }
    write_jsonl(bundle.examples_file, rows);
    write_file_atomic(bundle.config_file, to_json(config).dump(2) + "\n");
    write_file_atomic(bundle.stats_file, to_json(bundle.stats).dump(2) + "\n");
    return bundle;
}

std::vector<std::string> load_bundle_texts(const std::string& examples_file) {
    std::vector<std::string> texts;
    for (const auto& row : read_jsonl(examples_file))
        texts.push_back(row.at("text").get<std::string>());
    return texts;
}

}  // namespace rar
