// SPDX-License-Identifier: Apache-2.0
#include "rar/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "rar/prompts.hpp"
#include "rar/traces.hpp"

namespace rar {

std::string_view to_string(PredictionMode m) {
    return m == PredictionMode::tool ? "tool" : "text";
}

PredictionMode parse_prediction_mode(std::string_view s) {
    if (s == "tool")
        return PredictionMode::tool;
    if (s == "text")
        return PredictionMode::text;
    throw ValidationError("unknown prediction mode: " + std::string(s));
}

std::string format_prediction(const Prediction& p) {
    return "(" + p.condition + ", " + std::string(display_name(p.disposition)) + ")";
}

ToolSchema recommendation_tool() {
    return {std::string(kRecommendationTool),
            "Submit the most likely condition and the severity level for the patient.",
            {{"condition", ParamType::string, true,
              "One of the listed conditions, or \"inconclusive\" if the condition is not listed."},
             {"severity", ParamType::string, true, "One of \"Self-care\", \"Urgent Primary Care\", \"A&E\"."}}};
}

namespace {

std::string render_condition_list(const std::vector<std::string>& conditions) {
    std::string out;
    for (const auto& c : conditions) {
        if (!out.empty())
            out += '\n';
        out += "- " + c;
    }
    return out;
}

void check_resolved(std::string_view tmpl, const std::vector<std::string>& keys) {
    std::map<std::string, std::string> blanks;
    for (const auto& k : keys)
        blanks[k] = "";
    if (auto left = unresolved_placeholders(fill_template(tmpl, blanks), keys); !left.empty())
        throw ValidationError("unresolved placeholder {" + left.front() + "} in prediction prompt");
}

}  // namespace

PredictionPrompt build_prediction_prompt(PredictionMode mode,
                                         const std::optional<std::vector<RetrievalResult>>& context,
                                         const SyntheticQuery& query,
                                         const std::optional<std::vector<std::string>>& all_conditions) {
    if (context.has_value() == all_conditions.has_value())
        throw ValidationError("exactly one of retrieved context or the condition list must be supplied");

    PredictionPrompt out;
    const std::string demographics = render_demographics(query.demographics);
    if (context) {
        const std::vector<std::string> keys{"context", "question", "demographics", "sources"};
        const std::map<std::string, std::string> values{{"context", render_context(*context)},
                                                        {"question", query.symptoms_description},
                                                        {"demographics", demographics},
                                                        {"sources", render_sources(*context)}};
        const auto user_tmpl =
            mode == PredictionMode::tool ? prompts::kPredictToolContextUser : prompts::kPredictTextContextUser;
        check_resolved(user_tmpl, keys);
        out.system = std::string(mode == PredictionMode::tool ? prompts::kPredictToolContextSystem
                                                              : prompts::kPredictTextContextSystem);
        out.user = fill_template(user_tmpl, values);
    } else {
        const std::vector<std::string> keys{"conditions", "question", "demographics"};
        const std::map<std::string, std::string> values{{"conditions", render_condition_list(*all_conditions)},
                                                        {"question", query.symptoms_description},
                                                        {"demographics", demographics}};
        const auto user_tmpl =
            mode == PredictionMode::tool ? prompts::kPredictToolNoContextUser : prompts::kPredictTextNoContextUser;
        check_resolved(user_tmpl, keys);
        out.system = std::string(mode == PredictionMode::tool ? prompts::kPredictToolNoContextSystem
                                                              : prompts::kPredictTextNoContextSystem);
        out.user = fill_template(user_tmpl, values);
    }
    if (mode == PredictionMode::tool)
        out.tools = std::vector<ToolSchema>{recommendation_tool()};
    return out;
}

std::string normalize_condition(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isspace(u) || c == '-' || c == '_') {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty())
            out += ' ';
        pending_space = false;
        out += static_cast<char>(std::tolower(u));
    }
    return out;
}

namespace {

std::string strip_wrapping(std::string_view s) {
    std::string t = trim(s);
    auto is_wrap = [](char c) { return c == '"' || c == '\'' || c == '`' || c == '*'; };
    std::size_t b = 0;
    std::size_t e = t.size();
    while (b < e && is_wrap(t[b]))
        ++b;
    while (e > b && is_wrap(t[e - 1]))
        --e;
    return trim(std::string_view(t).substr(b, e - b));
}

std::optional<Disposition> match_severity(std::string_view s) {
    try {
        return parse_disposition(strip_wrapping(s));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

Prediction resolve(std::string_view condition, Disposition disposition, const std::vector<std::string>& allowed) {
    const std::string cond = strip_wrapping(condition);
    const std::string key = normalize_condition(cond);
    if (key == kInconclusive)
        return {std::string(kInconclusive), disposition, false};
    for (const auto& a : allowed)
        if (normalize_condition(a) == key)
            return {a, disposition, false};
    return {cond, disposition, true};
}

enum class ScanResult { found, bad_severity, none };

ScanResult scan_pairs(std::string_view text, const std::vector<std::string>& allowed, Prediction& out) {
    bool saw_pair = false;
    for (std::size_t close = text.rfind(')'); close != std::string_view::npos;
         close = close == 0 ? std::string_view::npos : text.rfind(')', close - 1)) {
        int depth = 0;
        std::size_t open = std::string_view::npos;
        for (std::size_t i = close + 1; i-- > 0;) {
            if (text[i] == ')')
                ++depth;
            else if (text[i] == '(' && --depth == 0) {
                open = i;
                break;
            }
        }
        if (open == std::string_view::npos)
            continue;
        const auto inner = text.substr(open + 1, close - open - 1);
        const auto comma = inner.rfind(',');
        if (comma == std::string_view::npos)
            continue;
        saw_pair = true;
        const auto cond = inner.substr(0, comma);
        if (strip_wrapping(cond).empty())
            continue;
        if (auto sev = match_severity(inner.substr(comma + 1))) {
            out = resolve(cond, *sev, allowed);
            return ScanResult::found;
        }
    }
    return saw_pair ? ScanResult::bad_severity : ScanResult::none;
}

}  // namespace

Prediction parse_text_prediction(const std::string& raw, const std::vector<std::string>& allowed_conditions,
                                 const ThinkDelimiters& delimiters) {
    Prediction p;
    const auto parsed = parse_reasoning(raw, delimiters);
    ScanResult answer_scan = ScanResult::none;
    if (parsed.reasoning && !parsed.unterminated) {
        answer_scan = scan_pairs(parsed.answer, allowed_conditions, p);
        if (answer_scan == ScanResult::found)
            return p;
    }
    const auto whole = scan_pairs(raw, allowed_conditions, p);
    if (whole == ScanResult::found)
        return p;
    if (whole == ScanResult::bad_severity || answer_scan == ScanResult::bad_severity)
        throw ParseError("prediction has no recognised severity: " + raw.substr(0, 200));
    throw ParseError("no (condition, severity) pair in: " + raw.substr(0, 200));
}

Prediction parse_tool_prediction(const ModelOutput& output, const std::vector<std::string>& allowed_conditions,
                                 const ThinkDelimiters& delimiters) {
    for (auto it = output.tool_calls.rbegin(); it != output.tool_calls.rend(); ++it) {
        if (it->name != kRecommendationTool)
            continue;
        const auto& args = it->arguments;
        if (!args.is_object() || !args.contains("condition") || !args.contains("severity") ||
            !args["condition"].is_string() || !args["severity"].is_string())
            throw ParseError("recommendation tool call is missing condition or severity");
        auto sev = match_severity(args["severity"].get<std::string>());
        if (!sev)
            throw ParseError("unknown severity: " + args["severity"].get<std::string>());
        return resolve(args["condition"].get<std::string>(), *sev, allowed_conditions);
    }
    const std::string text = output.raw.empty() ? output.answer : output.raw;
    return parse_text_prediction(text, allowed_conditions, delimiters);
}

json to_json(const EvalRunReport& r) {
    json per_type = json::object();
    for (const auto& [type, acc] : r.per_query_type)
        per_type[std::string(to_string(type))] = {{"n", acc.n},
                                                  {"condition_accuracy", acc.condition_accuracy},
                                                  {"disposition_accuracy", acc.disposition_accuracy}};
    return {{"condition_accuracy", r.condition_accuracy},
            {"disposition_accuracy", r.disposition_accuracy},
            {"per_query_type", per_type},
            {"n", r.n},
            {"parse_failures", r.parse_failures},
            {"unknown_conditions", r.unknown_conditions},
            {"underestimations", r.underestimations},
            {"overestimations", r.overestimations}};
}

EvalRunReport score_run(const std::vector<std::optional<Prediction>>& predictions,
                        const std::vector<SyntheticQuery>& gold) {
    if (predictions.size() != gold.size())
        throw ValidationError("score_run: " + std::to_string(predictions.size()) + " predictions for " +
                              std::to_string(gold.size()) + " queries");
    EvalRunReport r;
    r.n = gold.size();
    std::map<QueryType, std::array<std::size_t, 3>> counts;  // n, cond, disp
    std::size_t cond_hits = 0;
    std::size_t disp_hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        auto& c = counts[gold[i].query_type];
        ++c[0];
        const auto& p = predictions[i];
        if (!p) {
            ++r.parse_failures;
            continue;
        }
        if (p->unknown_condition)
            ++r.unknown_conditions;
        else if (normalize_condition(p->condition) == normalize_condition(gold[i].condition_title)) {
            ++cond_hits;
            ++c[1];
        }
        if (p->disposition == gold[i].disposition) {
            ++disp_hits;
            ++c[2];
        } else if (severity_rank(p->disposition) < severity_rank(gold[i].disposition)) {
            ++r.underestimations;
        } else {
            ++r.overestimations;
        }
    }
    if (r.n) {
        r.condition_accuracy = static_cast<double>(cond_hits) / static_cast<double>(r.n);
        r.disposition_accuracy = static_cast<double>(disp_hits) / static_cast<double>(r.n);
    }
    for (const auto& [type, c] : counts)
        r.per_query_type[type] = {c[0], static_cast<double>(c[1]) / static_cast<double>(c[0]),
                                  static_cast<double>(c[2]) / static_cast<double>(c[0])};
    return r;
}

json to_json(const AggregateReport& r) {
    return {{"runs", r.runs},
            {"mean_condition", r.mean_condition},
            {"mean_disposition", r.mean_disposition},
            {"std_condition", r.std_condition},
            {"std_disposition", r.std_disposition},
            {"single_run", r.single_run}};
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs)
        mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2)
        return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs)
        ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

}  // namespace

AggregateReport aggregate_runs(const std::vector<EvalRunReport>& reports) {
    if (reports.empty())
        throw ValidationError("aggregate_runs needs at least one report");
    std::vector<double> cond;
    std::vector<double> disp;
    for (const auto& r : reports) {
        cond.push_back(r.condition_accuracy);
        disp.push_back(r.disposition_accuracy);
    }
    AggregateReport a;
    a.runs = reports.size();
    a.single_run = reports.size() == 1;
    std::tie(a.mean_condition, a.std_condition) = mean_std(cond);
    std::tie(a.mean_disposition, a.std_disposition) = mean_std(disp);
    return a;
}

std::uint64_t estimate_model_memory(std::uint64_t param_count) {
    return 2 * param_count;
}

namespace {

std::string fixed(double v, int places) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", places, v);
    return buf;
}

std::string render_table(const std::vector<std::vector<std::string>>& cells) {
    std::vector<std::size_t> width;
    for (const auto& row : cells)
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (width.size() <= c)
                width.push_back(0);
            width[c] = std::max(width[c], row[c].size());
        }
    std::string out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            if (c)
                out += " | ";
            out += cells[r][c];
            if (c + 1 < cells[r].size())
                out.append(width[c] - cells[r][c].size(), ' ');
        }
        out += '\n';
        if (r == 0) {
            for (std::size_t c = 0; c < width.size(); ++c) {
                if (c)
                    out += "-+-";
                out.append(width[c], '-');
            }
            out += '\n';
        }
    }
    return out;
}

}  // namespace

std::string format_accuracy_table(const std::vector<AccuracyRow>& rows) {
    std::vector<std::vector<std::string>> cells{{"Model", "Condition", "Disposition", "Runs"}};
    for (const auto& row : rows) {
        const auto& a = row.aggregate;
        cells.push_back({row.label, fixed(a.mean_condition, 2) + " (" + fixed(a.std_condition, 2) + ")",
                         fixed(a.mean_disposition, 2) + " (" + fixed(a.std_disposition, 2) + ")",
                         std::to_string(a.runs)});
    }
    return render_table(cells);
}

std::string format_query_type_table(const std::vector<QueryTypeRow>& rows) {
    std::vector<std::string> header{"Model"};
    for (auto t : kAllQueryTypes) {
        header.push_back(std::string(to_string(t)) + " cond");
        header.push_back(std::string(to_string(t)) + " disp");
    }
    std::vector<std::vector<std::string>> cells{header};
    for (const auto& row : rows) {
        std::vector<std::string> line{row.label};
        for (auto t : kAllQueryTypes) {
            auto it = row.report.per_query_type.find(t);
            if (it == row.report.per_query_type.end()) {
                line.push_back("-");
                line.push_back("-");
            } else {
                line.push_back(fixed(it->second.condition_accuracy, 2));
                line.push_back(fixed(it->second.disposition_accuracy, 2));
            }
        }
        cells.push_back(std::move(line));
    }
    return render_table(cells);
}

std::string format_memory_table(const std::vector<MemoryRow>& rows) {
    std::vector<std::vector<std::string>> cells{{"Model", "Parameters", "Memory (GB)"}};
    for (const auto& row : rows) {
        const double gb = static_cast<double>(estimate_model_memory(row.param_count)) / 1e9;
        cells.push_back({row.model, fixed(static_cast<double>(row.param_count) / 1e9, 1) + "B",
                         std::floor(gb) == gb ? fixed(gb, 0) : fixed(gb, 1)});
    }
    return render_table(cells);
}

json to_json(const EvalConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"use_retrieval", c.use_retrieval},
            {"k", c.k},
            {"runs", c.runs},
            {"parallelism", c.parallelism},
            {"decode", to_json(c.decode)}};
}

EvalConfig eval_config_from_json(const json& j) {
    EvalConfig c;
    if (j.contains("mode"))
        c.mode = parse_prediction_mode(j["mode"].get<std::string>());
    c.use_retrieval = j.value("use_retrieval", c.use_retrieval);
    c.k = j.value("k", c.k);
    c.runs = j.value("runs", c.runs);
    c.parallelism = j.value("parallelism", c.parallelism);
    if (j.contains("decode"))
        c.decode = decode_params_from_json(j["decode"]);
    if (c.k == 0 || c.runs == 0)
        throw ValidationError("eval config needs k >= 1 and runs >= 1");
    return c;
}

json to_json(const EvalResult& r) {
    json runs = json::array();
    for (const auto& run : r.runs) {
        json j = to_json(run.report);
        j["endpoint_failures"] = run.endpoint_failures;
        runs.push_back(std::move(j));
    }
    json out = {{"runs", runs}, {"aggregate", to_json(r.aggregate)}, {"ceiling_holds", r.ceiling_holds}};
    out["p_at_k"] = r.p_at_k ? json(*r.p_at_k) : json(nullptr);
    return out;
}

EvalResult run_prediction_eval(const std::vector<SyntheticQuery>& queries, const std::vector<CorpusRecord>& records,
                               const VectorIndex* index, EmbeddingProvider* provider, ChatEndpoint& reasoner,
                               const EvalConfig& config) {
    if (config.runs == 0)
        throw ValidationError("eval needs at least one run");
    if (config.use_retrieval && (!index || !provider))
        throw ValidationError("retrieval evaluation needs an index and an embedding provider");

    std::vector<std::vector<RetrievalResult>> contexts(queries.size());
    std::vector<std::string> all_titles;
    for (const auto& r : records)
        all_titles.push_back(r.title);

    EvalResult result;
    if (config.use_retrieval) {
        parallel_for(queries.size(), config.parallelism, [&](std::size_t i) {
            contexts[i] = retrieve(queries[i].symptoms_description, *index, *provider, records, config.k);
        });
        std::size_t hits = 0;
        for (std::size_t i = 0; i < queries.size(); ++i)
            hits += std::any_of(contexts[i].begin(), contexts[i].end(),
                                [&](const RetrievalResult& r) { return r.doc_title == queries[i].condition_title; });
        result.p_at_k = queries.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(queries.size());
    }

    for (std::size_t run = 0; run < config.runs; ++run) {
        EvalRun er;
        er.predictions.resize(queries.size());
        er.raw_answers.resize(queries.size());
        std::vector<char> failed(queries.size(), 0);
        parallel_for(queries.size(), config.parallelism, [&](std::size_t i) {
            std::optional<std::vector<RetrievalResult>> ctx;
            std::optional<std::vector<std::string>> conditions;
            std::vector<std::string> allowed;
            if (config.use_retrieval) {
                ctx = contexts[i];
                for (const auto& r : contexts[i])
                    allowed.push_back(r.doc_title);
            } else {
                conditions = all_titles;
                allowed = all_titles;
            }
            const auto prompt = build_prediction_prompt(config.mode, ctx, queries[i], conditions);
            const std::vector<ChatMessage> messages{ChatMessage::system(prompt.system),
                                                    ChatMessage::user(prompt.user)};
            const std::vector<ToolSchema> tools = prompt.tools.value_or(std::vector<ToolSchema>{});
            ModelOutput output;
            try {
                output = with_retries(config.retry, [&] { return reasoner.complete(messages, tools, config.decode); });
            } catch (const std::exception& e) {
                failed[i] = 1;
                er.raw_answers[i] = e.what();
                return;
            }
            er.raw_answers[i] = output.raw.empty() ? output.answer : output.raw;
            try {
                er.predictions[i] = config.mode == PredictionMode::tool
                                        ? parse_tool_prediction(output, allowed, config.delimiters)
                                        : parse_text_prediction(er.raw_answers[i], allowed, config.delimiters);
            } catch (const ParseError&) {
                er.predictions[i].reset();
            }
        });
        er.endpoint_failures = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
        er.report = score_run(er.predictions, queries);
        if (result.p_at_k && er.report.condition_accuracy > *result.p_at_k)
            result.ceiling_holds = false;
        result.runs.push_back(std::move(er));
    }

    std::vector<EvalRunReport> reports;
    for (const auto& r : result.runs)
        reports.push_back(r.report);
    result.aggregate = aggregate_runs(reports);
    return result;
}

}  // namespace rar
