// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic patient query generation from condition pages.

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rar/corpus.hpp"
#include "rar/llm.hpp"

namespace rar {

enum class QueryType { basic, hypochondriac, downplay };
enum class Disposition { self_care, urgent_primary_care, a_and_e };

inline constexpr QueryType kAllQueryTypes[] = {QueryType::basic, QueryType::hypochondriac,
                                                QueryType::downplay};
inline constexpr Disposition kAllDispositions[] = {Disposition::self_care,
                                                    Disposition::urgent_primary_care,
                                                    Disposition::a_and_e};

std::string_view to_string(QueryType t);
QueryType parse_query_type(std::string_view s);

/// Canonical display strings: "Self-care", "Urgent Primary Care", "A&E".
std::string_view display_name(Disposition d);
/// Enum key: "self_care", "urgent_primary_care", "a_and_e".
std::string_view to_string(Disposition d);
/// Accepts display strings (case-insensitive) and enum keys.
Disposition parse_disposition(std::string_view s);
/// 0 = self-care, 2 = A&E.
int severity_rank(Disposition d);

struct Demographics {
    std::string age;
    std::string sex;
    std::string occupation;
    std::string social_support;
    std::string medical_history;

    bool operator==(const Demographics&) const = default;
};

json to_json(const Demographics& d);
/// Numeric ages are kept as their decimal string.
Demographics demographics_from_json(const json& j);
/// "age: 65, sex: female, occupation: ..., social support: ..., medical history: ..."
std::string render_demographics(const Demographics& d);

struct SyntheticQuery {
    std::string condition_title;
    QueryType query_type = QueryType::basic;
    Disposition disposition = Disposition::self_care;
    Demographics demographics;
    std::string symptoms_description;

    bool operator==(const SyntheticQuery&) const = default;
};

/// Query-set line: {"condition_title","query_type","disposition",
/// "general_demographics":{...},"symptoms_description"}.
json to_json(const SyntheticQuery& q);
SyntheticQuery synthetic_query_from_json(const json& j);
std::vector<SyntheticQuery> load_query_set(const std::string& path);
void write_query_set(const std::string& path, const std::vector<SyntheticQuery>& queries);

struct GenerationRefusal {
    std::string condition_title;
    Disposition disposition = Disposition::self_care;
    std::string reason;
};

struct PlanRow {
    std::string condition_title;
    QueryType query_type = QueryType::basic;
    Disposition disposition = Disposition::self_care;
    std::string sex;
};

std::string build_generation_prompt(const CorpusRecord& record, QueryType query_type,
                                    Disposition disposition, const std::string& sex);

using GenerationOutcome = std::variant<SyntheticQuery, GenerationRefusal>;

/// Extracts a fenced or bare JSON object from `raw`. An object with an "error"
/// key is a refusal; otherwise the demographics and symptoms are validated.
/// The plan row supplies condition, type and disposition.
GenerationOutcome parse_generation_response(const std::string& raw, const PlanRow& row);

/// The template-shaped JSON the teacher is asked to return.
json generation_json(const SyntheticQuery& q);

/// Uniform over (query type x disposition) with sex alternating between
/// "Female" and "Male"; conditions are drawn uniformly at random.
std::vector<PlanRow> make_plan(const std::vector<CorpusRecord>& records, std::size_t count,
                               std::uint64_t seed);

struct RowFailure {
    std::size_t row = 0;
    std::string reason;
};

struct GenerationResult {
    std::vector<SyntheticQuery> queries;
    std::vector<GenerationRefusal> refusals;
    std::vector<RowFailure> failures;
};

struct GenerationOptions {
    RetryPolicy retry;
    std::size_t parallelism = 4;
};

/// One call per plan row; every row yields exactly one query, refusal or
/// failure. Outputs keep plan order.
GenerationResult generate_query_set(const std::vector<CorpusRecord>& records, ChatEndpoint& llm,
                                    const std::vector<PlanRow>& plan,
                                    const GenerationOptions& options = {});

/// Generates until `target` queries exist, redrawing plan rows for refusals
/// and failures. Rows whose (condition, disposition) pair is in `forbidden`
/// are never drawn. Gives up after 5 x target calls.
GenerationResult generate_to_target(
    const std::vector<CorpusRecord>& records, ChatEndpoint& llm, std::size_t target, std::uint64_t seed,
    const std::vector<std::pair<std::string, Disposition>>& forbidden = {},
    const GenerationOptions& options = {});

struct DedupResult {
    std::vector<SyntheticQuery> kept;
    std::vector<SyntheticQuery> removed;
};

/// Removes train queries sharing a (condition_title, disposition) pair with
/// any eval query.
DedupResult dedup_split(const std::vector<SyntheticQuery>& eval_set,
                        const std::vector<SyntheticQuery>& train_set);

}  // namespace rar
