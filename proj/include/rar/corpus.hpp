// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rar/common.hpp"
#include "rar/llm.hpp"

namespace rar {

/// One condition document.
struct CorpusRecord {
    std::string title;
    std::string full_content;
    std::optional<std::string> summary;

    bool operator==(const CorpusRecord&) const = default;
};

json to_json(const CorpusRecord& r);
/// Validates the record invariants; `where` prefixes error messages.
CorpusRecord corpus_record_from_json(const json& j, const std::string& where = "record");

/// Reads one record per line. Duplicate titles, empty fields or malformed
/// lines raise ParseError naming the line.
std::vector<CorpusRecord> load_corpus(const std::string& path);
void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records);

std::vector<CorpusRecord> exclude_records(const std::vector<CorpusRecord>& records,
                                          const std::set<std::string>& titles);

struct SummarisationFailure {
    std::string title;
    std::string reason;
};

struct SummarisationReport {
    std::size_t record_count = 0;
    /// Mean of summary_length / full_length over summarised records.
    double mean_reduction_ratio = 0.0;
    std::vector<double> per_record_ratios;
    std::vector<SummarisationFailure> failures;
};

json to_json(const SummarisationReport& r);

struct SummariseOptions {
    RetryPolicy retry;
    std::size_t parallelism = 4;
};

/// Ratio of summary length to full length, in characters.
double reduction_ratio(const CorpusRecord& r);

/// One chat call per record with `prompt_template`'s {document} filled in.
/// Failed records are reported and keep no summary. Output order matches
/// input order.
std::pair<std::vector<CorpusRecord>, SummarisationReport> summarise_corpus(
    const std::vector<CorpusRecord>& records, ChatEndpoint& llm, const std::string& prompt_template,
    const SummariseOptions& options = {});

}  // namespace rar
