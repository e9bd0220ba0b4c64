// SPDX-License-Identifier: Apache-2.0
#include "rar/corpus.hpp"

#include <numeric>
#include <unordered_set>

namespace rar {

json to_json(const CorpusRecord& r) {
    json j{{"title", r.title}, {"full_content", r.full_content}};
    if (r.summary)
        j["summary"] = *r.summary;
    return j;
}

CorpusRecord corpus_record_from_json(const json& j, const std::string& where) {
    if (!j.is_object())
        throw ParseError(where + ": expected a JSON object");
    CorpusRecord r;
    try {
        r.title = j.at("title").get<std::string>();
        r.full_content = j.at("full_content").get<std::string>();
        if (auto it = j.find("summary"); it != j.end() && !it->is_null())
            r.summary = it->get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(where + ": " + e.what());
    }
    if (r.title.empty())
        throw ParseError(where + ": empty title");
    if (r.full_content.empty())
        throw ParseError(where + ": empty full_content for '" + r.title + "'");
    if (r.summary && r.summary->empty())
        throw ParseError(where + ": empty summary for '" + r.title + "'");
    return r;
}

std::vector<CorpusRecord> load_corpus(const std::string& path) {
    auto lines = split_lines(read_file(path));
    std::vector<CorpusRecord> records;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty())
            continue;
        const std::string where = path + ":" + std::to_string(i + 1);
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::exception& e) {
            throw ParseError(where + ": malformed JSON: " + e.what());
        }
        auto record = corpus_record_from_json(j, where);
        if (!seen.insert(record.title).second)
            throw ParseError(where + ": duplicate title '" + record.title + "'");
        records.push_back(std::move(record));
    }
    return records;
}

void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const auto& r : records)
        rows.push_back(to_json(r));
    write_jsonl(path, rows);
}

std::vector<CorpusRecord> exclude_records(const std::vector<CorpusRecord>& records,
                                          const std::set<std::string>& titles) {
    std::vector<CorpusRecord> kept;
    kept.reserve(records.size());
    for (const auto& r : records) {
        if (!titles.count(r.title))
            kept.push_back(r);
    }
    return kept;
}

json to_json(const SummarisationReport& r) {
    json failures = json::array();
    for (const auto& f : r.failures)
        failures.push_back({{"title", f.title}, {"reason", f.reason}});
    return {{"record_count", r.record_count},
            {"mean_reduction_ratio", r.mean_reduction_ratio},
            {"per_record_ratios", r.per_record_ratios},
            {"failures", failures}};
}

double reduction_ratio(const CorpusRecord& r) {
    if (!r.summary || r.full_content.empty())
        return 0.0;
    return static_cast<double>(r.summary->size()) / static_cast<double>(r.full_content.size());
}

std::pair<std::vector<CorpusRecord>, SummarisationReport> summarise_corpus(
    const std::vector<CorpusRecord>& records, ChatEndpoint& llm, const std::string& prompt_template,
    const SummariseOptions& options) {
    if (prompt_template.find("{document}") == std::string::npos)
        throw ValidationError("summarisation template lacks a {document} placeholder");

    std::vector<CorpusRecord> out(records);
    std::vector<std::optional<std::string>> errors(records.size());

    parallel_for(records.size(), options.parallelism, [&](std::size_t i) {
        out[i].summary.reset();
        const std::vector<ChatMessage> messages{
            ChatMessage::user(fill_template(prompt_template, {{"document", records[i].full_content}}))};
        try {
            auto summary = with_retries(options.retry, [&] {
                auto reply = llm.complete(messages);
                auto text = trim(reply.answer);
                if (text.empty())
                    throw EndpointError(EndpointError::Kind::schema, "empty summary returned");
                return text;
            });
            out[i].summary = std::move(summary);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    SummarisationReport report;
    report.record_count = records.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (errors[i]) {
            report.failures.push_back({out[i].title, *errors[i]});
            continue;
        }
        report.per_record_ratios.push_back(reduction_ratio(out[i]));
    }
    if (!report.per_record_ratios.empty())
        report.mean_reduction_ratio =
            std::accumulate(report.per_record_ratios.begin(), report.per_record_ratios.end(), 0.0) /
            static_cast<double>(report.per_record_ratios.size());
    return {std::move(out), std::move(report)};
}

}  // namespace rar
