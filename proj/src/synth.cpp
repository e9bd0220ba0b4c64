// SPDX-License-Identifier: Apache-2.0
#include "rar/synth.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <unordered_map>

#include "rar/prompts.hpp"

namespace rar {

std::string_view to_string(QueryType t) {
    switch (t) {
    case QueryType::basic:
        return "basic";
    case QueryType::hypochondriac:
        return "hypochondriac";
    case QueryType::downplay:
        return "downplay";
    }
    return "basic";
}

QueryType parse_query_type(std::string_view s) {
    const auto v = to_lower(trim(s));
    for (auto t : kAllQueryTypes) {
        if (v == to_string(t))
            return t;
    }
    throw ParseError("unknown query type: " + std::string(s));
}

std::string_view display_name(Disposition d) {
    switch (d) {
    case Disposition::self_care:
        return "Self-care";
    case Disposition::urgent_primary_care:
        return "Urgent Primary Care";
    case Disposition::a_and_e:
        return "A&E";
    }
    return "Self-care";
}

std::string_view to_string(Disposition d) {
    switch (d) {
    case Disposition::self_care:
        return "self_care";
    case Disposition::urgent_primary_care:
        return "urgent_primary_care";
    case Disposition::a_and_e:
        return "a_and_e";
    }
    return "self_care";
}

Disposition parse_disposition(std::string_view s) {
    const auto v = to_lower(trim(s));
    for (auto d : kAllDispositions) {
        if (v == to_lower(display_name(d)) || v == to_string(d))
            return d;
    }
    throw ParseError("unknown disposition: " + std::string(s));
}

int severity_rank(Disposition d) { return static_cast<int>(d); }

json to_json(const Demographics& d) {
    return {{"age", d.age},
            {"sex", d.sex},
            {"occupation", d.occupation},
            {"social_support", d.social_support},
            {"medical_history", d.medical_history}};
}

Demographics demographics_from_json(const json& j) {
    if (!j.is_object())
        throw ParseError("demographics must be a JSON object");
    auto field = [&](const char* key) -> std::string {
        auto it = j.find(key);
        if (it == j.end() || it->is_null())
            throw ParseError(std::string("demographics missing '") + key + "'");
        if (it->is_string())
            return it->get<std::string>();
        if (it->is_number_integer())
            return std::to_string(it->get<long long>());
        if (it->is_number())
            return it->dump();
        throw ParseError(std::string("demographics field '") + key + "' must be a string");
    };
    return {field("age"), field("sex"), field("occupation"), field("social_support"),
            field("medical_history")};
}

std::string render_demographics(const Demographics& d) {
    return "age: " + d.age + ", sex: " + d.sex + ", occupation: " + d.occupation +
           ", social support: " + d.social_support + ", medical history: " + d.medical_history;
}

json generation_json(const SyntheticQuery& q) {
    return {{"general_demographics", to_json(q.demographics)}, {"symptoms_description", q.symptoms_description}};
}

json to_json(const SyntheticQuery& q) {
    json j = generation_json(q);
    j["condition_title"] = q.condition_title;
    j["query_type"] = to_string(q.query_type);
    j["disposition"] = display_name(q.disposition);
    return j;
}

SyntheticQuery synthetic_query_from_json(const json& j) {
    SyntheticQuery q;
    try {
        q.condition_title = j.at("condition_title").get<std::string>();
        q.query_type = parse_query_type(j.at("query_type").get<std::string>());
        q.disposition = parse_disposition(j.at("disposition").get<std::string>());
        q.demographics = demographics_from_json(j.at("general_demographics"));
        q.symptoms_description = j.at("symptoms_description").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("query record: ") + e.what());
    }
    if (q.condition_title.empty())
        throw ParseError("query record: empty condition_title");
    if (q.symptoms_description.empty())
        throw ParseError("query record: empty symptoms_description");
    return q;
}

std::vector<SyntheticQuery> load_query_set(const std::string& path) {
    std::vector<SyntheticQuery> out;
    for (const auto& row : read_jsonl(path))
        out.push_back(synthetic_query_from_json(row));
    return out;
}

void write_query_set(const std::string& path, const std::vector<SyntheticQuery>& queries) {
    std::vector<json> rows;
    rows.reserve(queries.size());
    for (const auto& q : queries)
        rows.push_back(to_json(q));
    write_jsonl(path, rows);
}

std::string build_generation_prompt(const CorpusRecord& record, QueryType query_type,
                                    Disposition disposition, const std::string& sex) {
    if (record.full_content.empty())
        throw ValidationError("record '" + record.title + "' has no full content");
    static const std::vector<std::string> keys{"query_type", "severity_level", "sex", "conditions_content"};
    auto prompt = fill_template(prompts::kQueryGeneration,
                                {{"query_type", std::string(to_string(query_type))},
                                 {"severity_level", std::string(display_name(disposition))},
                                 {"sex", sex},
                                 {"conditions_content", record.full_content}});
    // Only the tail after the content could still hold a literal key; the
    // content itself is user data and may mention braces.
    const auto tail_end = prompt.size() - record.full_content.size();
    if (auto left = unresolved_placeholders(std::string_view(prompt).substr(0, tail_end), keys); !left.empty())
        throw ValidationError("unresolved placeholder {" + left.front() + "} in generation prompt");
    return prompt;
}

namespace {

/// First fenced ```json block, else the outermost {...} span.
std::string extract_json_text(const std::string& raw) {
    auto fence = raw.find("```");
    if (fence != std::string::npos) {
        auto body = raw.find('\n', fence);
        auto close = body == std::string::npos ? std::string::npos : raw.find("```", body);
        if (close != std::string::npos)
            return raw.substr(body + 1, close - body - 1);
    }
    auto open = raw.find('{');
    auto close = raw.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open)
        throw ParseError("no JSON object in generation response");
    return raw.substr(open, close - open + 1);
}

}  // namespace

GenerationOutcome parse_generation_response(const std::string& raw, const PlanRow& row) {
    json j;
    try {
        j = json::parse(extract_json_text(raw));
    } catch (const json::exception& e) {
        throw ParseError(std::string("generation response is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw ParseError("generation response is not a JSON object");
    if (auto it = j.find("error"); it != j.end())
        return GenerationRefusal{row.condition_title, row.disposition,
                                 it->is_string() ? it->get<std::string>() : it->dump()};

    SyntheticQuery q;
    q.condition_title = row.condition_title;
    q.query_type = row.query_type;
    q.disposition = row.disposition;
    auto demo = j.find("general_demographics");
    if (demo == j.end())
        throw ParseError("generation response missing 'general_demographics'");
    q.demographics = demographics_from_json(*demo);
    auto symptoms = j.find("symptoms_description");
    if (symptoms == j.end() || !symptoms->is_string())
        throw ParseError("generation response missing 'symptoms_description'");
    q.symptoms_description = symptoms->get<std::string>();
    if (trim(q.symptoms_description).empty())
        throw ParseError("generation response has empty 'symptoms_description'");
    return q;
}

std::vector<PlanRow> make_plan(const std::vector<CorpusRecord>& records, std::size_t count,
                               std::uint64_t seed) {
    if (records.empty() && count > 0)
        throw ValidationError("cannot plan queries over an empty corpus");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, records.empty() ? 0 : records.size() - 1);
    std::vector<PlanRow> plan;
    plan.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t cell = i % 9;
        plan.push_back({records[pick(rng)].title, kAllQueryTypes[cell / 3], kAllDispositions[cell % 3],
                        i % 2 == 0 ? "Female" : "Male"});
    }
    std::shuffle(plan.begin(), plan.end(), rng);
    // Shuffling keeps the type/disposition balance; restore strict sex
    // alternation afterwards.
    for (std::size_t i = 0; i < plan.size(); ++i)
        plan[i].sex = i % 2 == 0 ? "Female" : "Male";
    return plan;
}

GenerationResult generate_query_set(const std::vector<CorpusRecord>& records, ChatEndpoint& llm,
                                    const std::vector<PlanRow>& plan, const GenerationOptions& options) {
    std::unordered_map<std::string, const CorpusRecord*> by_title;
    for (const auto& r : records)
        by_title.emplace(r.title, &r);
    for (const auto& row : plan) {
        if (!by_title.count(row.condition_title))
            throw ValidationError("plan refers to unknown condition '" + row.condition_title + "'");
    }

    std::vector<std::variant<std::monostate, SyntheticQuery, GenerationRefusal, std::string>> outcomes(plan.size());
    parallel_for(plan.size(), options.parallelism, [&](std::size_t i) {
        const auto& row = plan[i];
        const auto prompt = build_generation_prompt(*by_title.at(row.condition_title), row.query_type,
                                                    row.disposition, row.sex);
        const std::vector<ChatMessage> messages{ChatMessage::user(prompt)};
        try {
            auto outcome = with_retries(options.retry, [&] {
                return parse_generation_response(llm.complete(messages).answer, row);
            });
            if (auto* q = std::get_if<SyntheticQuery>(&outcome))
                outcomes[i] = std::move(*q);
            else
                outcomes[i] = std::get<GenerationRefusal>(std::move(outcome));
        } catch (const std::exception& e) {
            outcomes[i] = std::string(e.what());
        }
    });

    GenerationResult result;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (auto* q = std::get_if<SyntheticQuery>(&outcomes[i]))
            result.queries.push_back(std::move(*q));
        else if (auto* r = std::get_if<GenerationRefusal>(&outcomes[i]))
            result.refusals.push_back(std::move(*r));
        else if (auto* e = std::get_if<std::string>(&outcomes[i]))
            result.failures.push_back({i, *e});
    }
    return result;
}

GenerationResult generate_to_target(const std::vector<CorpusRecord>& records, ChatEndpoint& llm,
                                    std::size_t target, std::uint64_t seed,
                                    const std::vector<std::pair<std::string, Disposition>>& forbidden,
                                    const GenerationOptions& options) {
    const std::set<std::pair<std::string, Disposition>> banned(forbidden.begin(), forbidden.end());
    const std::size_t max_calls = 5 * target;
    std::size_t calls = 0;
    std::uint64_t round = 0;
    GenerationResult total;
    while (total.queries.size() < target && calls < max_calls) {
        const std::size_t want = std::min(target - total.queries.size(), max_calls - calls);
        std::vector<PlanRow> plan;
        // Oversample then filter forbidden pairs; stop if the corpus offers
        // no admissible pairs at all.
        for (int attempt = 0; plan.size() < want && attempt < 50; ++attempt) {
            for (auto& row : make_plan(records, want * 2, seed + 7919 * ++round)) {
                if (plan.size() == want)
                    break;
                if (!banned.count({row.condition_title, row.disposition}))
                    plan.push_back(std::move(row));
            }
        }
        if (plan.empty())
            break;
        for (std::size_t i = 0; i < plan.size(); ++i)
            plan[i].sex = (total.queries.size() + total.refusals.size() + total.failures.size() + i) % 2 == 0
                              ? "Female"
                              : "Male";
        calls += plan.size();
        auto batch = generate_query_set(records, llm, plan, options);
        for (auto& q : batch.queries)
            total.queries.push_back(std::move(q));
        for (auto& r : batch.refusals)
            total.refusals.push_back(std::move(r));
        for (auto& f : batch.failures)
            total.failures.push_back(std::move(f));
    }
    return total;
}

DedupResult dedup_split(const std::vector<SyntheticQuery>& eval_set,
                        const std::vector<SyntheticQuery>& train_set) {
    std::set<std::pair<std::string, Disposition>> eval_keys;
    for (const auto& q : eval_set)
        eval_keys.emplace(q.condition_title, q.disposition);
    DedupResult out;
    for (const auto& q : train_set) {
        if (eval_keys.count({q.condition_title, q.disposition}))
            out.removed.push_back(q);
        else
            out.kept.push_back(q);
    }
    return out;
}

}  // namespace rar
