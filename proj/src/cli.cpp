// SPDX-License-Identifier: Apache-2.0
#include "rar/cli.hpp"

#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "rar/prompts.hpp"
#include "rar/service.hpp"

namespace rar {

const EndpointConfig& AppConfig::endpoint(const std::string& role) const {
    auto it = endpoints.find(role);
    if (it == endpoints.end())
        throw ValidationError("config has no endpoints." + role + " entry");
    return it->second;
}

AppConfig app_config_from_json(const json& j) {
    AppConfig c;
    if (j.contains("retrieval"))
        c.retrieval = retrieval_config_from_json(j["retrieval"]);
    if (auto it = j.find("embedding"); it != j.end()) {
        c.embedding.provider = it->value("provider", c.embedding.provider);
        c.embedding.base_url = it->value("base_url", "");
        if (it->contains("dimension") && !(*it)["dimension"].is_null())
            c.embedding.dimension = (*it)["dimension"].get<std::size_t>();
    }
    if (auto it = j.find("endpoints"); it != j.end())
        for (const auto& [role, cfg] : it->items())
            c.endpoints.emplace(role, endpoint_config_from_json(cfg));
    if (j.contains("turn"))
        c.turn = turn_config_from_json(j["turn"]);
    if (auto it = j.find("service"); it != j.end()) {
        c.service.host = it->value("host", c.service.host);
        c.service.port = it->value("port", c.service.port);
        c.service.store = it->value("store", c.service.store);
    }
    if (j.contains("training"))
        c.training = training_config_from_json(j["training"]);
    if (j.contains("eval"))
        c.eval = eval_config_from_json(j["eval"]);
    if (auto it = j.find("retry"); it != j.end()) {
        c.retry.attempts = it->value("attempts", c.retry.attempts);
        c.retry.base_delay = std::chrono::milliseconds(it->value("base_delay_ms", c.retry.base_delay.count()));
    }
    c.parallelism = j.value("parallelism", c.parallelism);
    if (c.parallelism == 0)
        throw ValidationError("parallelism must be >= 1");
    return c;
}

AppConfig load_app_config(const std::string& path) {
    try {
        return app_config_from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const EmbeddingConfig& config) {
    if (config.provider == "hashing")
        return std::make_unique<HashingEmbeddingProvider>(config.dimension.value_or(768));
    if (config.provider == "http")
        return std::make_unique<HttpEmbeddingProvider>(config.base_url, config.dimension);
    throw ValidationError("unknown embedding provider: " + config.provider);
}

}  // namespace rar

namespace rar::cli {

namespace {

std::vector<std::size_t> parse_cutoffs(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty())
            continue;
        std::size_t pos = 0;
        const unsigned long v = std::stoul(item, &pos);
        if (pos != item.size() || v == 0)
            throw ValidationError("bad cutoff: " + item);
        out.push_back(v);
    }
    if (out.empty())
        throw ValidationError("no cutoffs given");
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<LabelledQuery> labelled(const std::vector<SyntheticQuery>& queries) {
    std::vector<LabelledQuery> out;
    for (const auto& q : queries)
        out.push_back({q.symptoms_description, q.condition_title});
    return out;
}

struct Context {
    std::string config_path;
    AppConfig config;
    WhitespaceTokenizer tokenizer;

    void load() {
        if (!config_path.empty())
            config = load_app_config(config_path);
    }
};

int run_ingest(const std::string& input, const std::string& output,
               const std::vector<std::string>& exclude) {
    auto records = load_corpus(input);
    const auto before = records.size();
    records = exclude_records(records, std::set<std::string>(exclude.begin(), exclude.end()));
    write_corpus(output, records);
    std::cerr << "ingest: " << before << " records read, " << records.size() << " written to " << output << "\n";
    return 0;
}

int run_summarise(Context& ctx, const std::string& corpus, const std::string& output, const std::string& report) {
    const auto records = load_corpus(corpus);
    auto llm = make_chat_endpoint(ctx.config.endpoint("summariser"));
    auto [out, rep] = summarise_corpus(records, *llm, std::string(prompts::kSummarisation),
                                       {ctx.config.retry, ctx.config.parallelism});
    write_corpus(output, out);
    if (!report.empty())
        write_file_atomic(report, to_json(rep).dump(2) + "\n");
    std::cerr << "summarise: " << rep.record_count - rep.failures.size() << "/" << rep.record_count
              << " summarised, mean length ratio " << rep.mean_reduction_ratio << "\n";
    for (const auto& f : rep.failures)
        std::cerr << "  failed: " << f.title << ": " << f.reason << "\n";
    return 0;
}

int run_index(Context& ctx, const std::string& corpus, const std::string& output, const std::string& mode) {
    auto cfg = ctx.config.retrieval;
    if (!mode.empty())
        cfg.mode = parse_index_mode(mode);
    const auto records = load_corpus(corpus);
    auto provider = make_embedding_provider(ctx.config.embedding);
    const auto index = build_index(records, cfg, *provider, ctx.tokenizer);
    index.save(output);
    std::cerr << "index: " << index.size() << " " << to_string(cfg.mode) << " vectors of dimension "
              << index.dimension() << " written to " << output << "\n";
    return 0;
}

int run_gen_queries(Context& ctx, const std::string& corpus, const std::string& output, std::size_t count,
                    std::uint64_t seed, const std::string& disjoint_from, const std::string& refusals_path) {
    const auto records = load_corpus(corpus);
    auto llm = make_chat_endpoint(ctx.config.endpoint("generator"));
    std::vector<std::pair<std::string, Disposition>> forbidden;
    std::vector<SyntheticQuery> eval_set;
    if (!disjoint_from.empty()) {
        eval_set = load_query_set(disjoint_from);
        for (const auto& q : eval_set)
            forbidden.emplace_back(q.condition_title, q.disposition);
    }
    auto result = generate_to_target(records, *llm, count, seed, forbidden,
                                      {ctx.config.retry, ctx.config.parallelism});
    auto queries = std::move(result.queries);
    if (!eval_set.empty())
        queries = dedup_split(eval_set, queries).kept;
    write_query_set(output, queries);
    if (!refusals_path.empty()) {
        std::vector<json> rows;
        for (const auto& r : result.refusals)
            rows.push_back({{"condition_title", r.condition_title},
                            {"disposition", display_name(r.disposition)},
                            {"reason", r.reason}});
        write_jsonl(refusals_path, rows);
    }
    std::cerr << "gen-queries: " << queries.size() << " queries, " << result.refusals.size() << " refusals, "
              << result.failures.size() << " failures\n";
    if (queries.size() < count) {
        std::cerr << "gen-queries: target of " << count << " not reached\n";
        return 1;
    }
    return 0;
}

int run_gen_traces(Context& ctx, const std::string& corpus, const std::string& index_path,
                   const std::string& queries_path, const std::string& output, std::size_t k) {
    const auto records = load_corpus(corpus);
    const auto index = VectorIndex::load(index_path);
    const auto queries = load_query_set(queries_path);
    auto provider = make_embedding_provider(ctx.config.embedding);
    auto teacher = make_chat_endpoint(ctx.config.endpoint("teacher"));
    TraceGenerationOptions opts;
    opts.k = k ? k : ctx.config.retrieval.k;
    opts.retry = ctx.config.retry;
    opts.parallelism = ctx.config.parallelism;
    auto result = generate_traces(queries, index, *provider, records, *teacher, ctx.tokenizer, opts);
    write_traces(output, result.examples);
    std::cerr << "gen-traces: " << result.examples.size() << " examples, " << result.excluded.size()
              << " excluded\n";
    for (const auto& [row, why] : result.excluded)
        std::cerr << "  query " << row << ": " << why << "\n";
    return 0;
}

int run_export_train(Context& ctx, const std::string& traces, const std::string& out_dir) {
    const auto examples = load_traces(traces);
    const auto bundle = export_training_bundle(examples, out_dir, ctx.config.training);
    for (const auto& w : bundle.warnings)
        std::cerr << "warning: " << w << "\n";
    std::cerr << "export-train: " << bundle.stats.count << " examples, mean token length "
              << bundle.stats.mean_token_length << ", max " << bundle.stats.max_token_length << "\n";
    std::cout << bundle.examples_file << "\n" << bundle.config_file << "\n" << bundle.stats_file << "\n";
    return 0;
}

int run_eval_retrieval(Context& ctx, const std::vector<std::string>& index_paths, const std::string& queries_path,
                       const std::string& cutoffs_arg, const std::string& output) {
    const auto cutoffs = parse_cutoffs(cutoffs_arg);
    const auto queries = labelled(load_query_set(queries_path));
    auto provider = make_embedding_provider(ctx.config.embedding);
    std::vector<PAtKRow> rows;
    json report = json::array();
    for (const auto& path : index_paths) {
        const auto index = VectorIndex::load(path);
        PAtKRow row;
        row.label = index.mode() == IndexMode::summaries ? "Summaries" : "Full pages";
        row.documents = index.size();
        row.table = evaluate_p_at_k(index, queries, cutoffs, *provider);
        for (std::size_t i = 1; i < row.table.values.size(); ++i)
            if (row.table.values[i] < row.table.values[i - 1])
                throw Error("p@k decreased between cutoffs; index " + path + " is inconsistent");
        report.push_back({{"index", path}, {"label", row.label}, {"documents", row.documents},
                          {"table", to_json(row.table)}});
        rows.push_back(std::move(row));
    }
    std::cout << format_p_at_k_table(rows);
    if (!output.empty())
        write_file_atomic(output, report.dump(2) + "\n");
    return 0;
}

int run_eval_predict(Context& ctx, const std::string& corpus, const std::string& index_path,
                     const std::string& queries_path, const std::string& endpoint_role, const std::string& mode,
                     std::size_t runs, std::size_t k, bool no_retrieval, const std::string& label,
                     const std::string& output) {
    const auto records = load_corpus(corpus);
    const auto queries = load_query_set(queries_path);
    auto reasoner = make_chat_endpoint(ctx.config.endpoint(endpoint_role));
    EvalConfig cfg = ctx.config.eval;
    cfg.retry = ctx.config.retry;
    cfg.parallelism = ctx.config.parallelism;
    cfg.delimiters = ctx.config.endpoint(endpoint_role).delimiters;
    if (!mode.empty())
        cfg.mode = parse_prediction_mode(mode);
    if (runs)
        cfg.runs = runs;
    if (k)
        cfg.k = k;
    cfg.use_retrieval = !no_retrieval;

    std::optional<VectorIndex> index;
    std::unique_ptr<EmbeddingProvider> provider;
    if (cfg.use_retrieval) {
        if (index_path.empty())
            throw ValidationError("eval-predict with retrieval needs --index");
        index = VectorIndex::load(index_path);
        provider = make_embedding_provider(ctx.config.embedding);
    }
    const auto result = run_prediction_eval(queries, records, index ? &*index : nullptr, provider.get(), *reasoner, cfg);

    const std::string name = label.empty() ? ctx.config.endpoint(endpoint_role).model : label;
    std::cout << format_accuracy_table({{name, result.aggregate}}) << "\n";
    std::cout << format_query_type_table({{name, result.runs.front().report}});
    std::size_t parse_failures = 0;
    for (const auto& r : result.runs)
        parse_failures += r.report.parse_failures;
    std::cout << "parse failures (all runs): " << parse_failures << "\n";
    if (result.p_at_k)
        std::cout << "p@" << cfg.k << " ceiling: " << *result.p_at_k
                  << (result.ceiling_holds ? " (holds)" : " (VIOLATED)") << "\n";
    if (!output.empty())
        write_file_atomic(output, to_json(result).dump(2) + "\n");
    if (!result.ceiling_holds) {
        std::cerr << "eval-predict: condition accuracy exceeded retrieval p@k\n";
        return 2;
    }
    return 0;
}

int run_serve(Context& ctx, const std::string& corpus, const std::string& index_path, const std::string& host,
              int port, const std::string& store_path) {
    const auto records = load_corpus(corpus);
    const auto index = VectorIndex::load(index_path);
    auto provider = make_embedding_provider(ctx.config.embedding);
    auto agent = make_chat_endpoint(ctx.config.endpoint("agent"));
    auto reasoner = make_chat_endpoint(ctx.config.endpoint("reasoner"));
    ThreadStore store(store_path.empty() ? ctx.config.service.store : store_path);
    ChatApi api(store, make_turn_runner({*agent, *reasoner, index, *provider, records, ctx.tokenizer},
                                        ctx.config.turn));
    HttpServer server(api);
    const int bound = server.bind(host.empty() ? ctx.config.service.host : host,
                                  port >= 0 ? port : ctx.config.service.port);
    std::cerr << "serve: listening on " << (host.empty() ? ctx.config.service.host : host) << ":" << bound << "\n";
    server.listen();
    return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"Retrieval-augmented reasoning pipeline", "rar"};
    app.require_subcommand(1);
    app.fallthrough();

    Context ctx;
    app.add_option("--config", ctx.config_path, "JSON configuration file")->check(CLI::ExistingFile);

    std::function<int()> action;

    auto* ingest = app.add_subcommand("ingest", "Validate a corpus file and drop excluded titles");
    std::string in_path, out_path, corpus, index_path, queries, report, mode, label, disjoint, refusals, host, store;
    std::string cutoffs = "1,5,10,30,50,100";
    std::vector<std::string> exclude, indices;
    std::size_t count = 0, k = 0, runs = 0;
    std::uint64_t seed = 0;
    bool no_retrieval = false;
    int port = -1;

    ingest->add_option("--input", in_path, "Corpus JSONL to read")->required();
    ingest->add_option("--output", out_path, "Corpus JSONL to write")->required();
    ingest->add_option("--exclude", exclude, "Titles to remove");
    ingest->callback([&] { action = [&] { return run_ingest(in_path, out_path, exclude); }; });

    auto* summarise = app.add_subcommand("summarise", "Summarise every record with the summariser endpoint");
    summarise->add_option("--corpus", corpus)->required();
    summarise->add_option("--output", out_path)->required();
    summarise->add_option("--report", report, "Write the summarisation report JSON here");
    summarise->callback([&] { action = [&] { return run_summarise(ctx, corpus, out_path, report); }; });

    auto* index = app.add_subcommand("index", "Embed the corpus and write a vector index");
    index->add_option("--corpus", corpus)->required();
    index->add_option("--output", out_path)->required();
    index->add_option("--mode", mode, "summaries or full_pages (default from config)");
    index->callback([&] { action = [&] { return run_index(ctx, corpus, out_path, mode); }; });

    auto* gen_queries = app.add_subcommand("gen-queries", "Generate synthetic patient queries");
    gen_queries->add_option("--corpus", corpus)->required();
    gen_queries->add_option("--output", out_path)->required();
    gen_queries->add_option("--count", count, "Number of queries to produce")->required();
    gen_queries->add_option("--seed", seed);
    gen_queries->add_option("--disjoint-from", disjoint, "Query set whose (condition, disposition) pairs to avoid");
    gen_queries->add_option("--refusals", refusals, "Write refusals JSONL here");
    gen_queries->callback([&] {
        action = [&] { return run_gen_queries(ctx, corpus, out_path, count, seed, disjoint, refusals); };
    });

    auto* gen_traces = app.add_subcommand("gen-traces", "Collect teacher reasoning traces");
    gen_traces->add_option("--corpus", corpus)->required();
    gen_traces->add_option("--index", index_path)->required();
    gen_traces->add_option("--queries", queries)->required();
    gen_traces->add_option("--output", out_path)->required();
    gen_traces->add_option("--k", k, "Documents per query (default from config)");
    gen_traces->callback([&] {
        action = [&] { return run_gen_traces(ctx, corpus, index_path, queries, out_path, k); };
    });

    auto* export_train = app.add_subcommand("export-train", "Write the fine-tuning bundle");
    export_train->add_option("--traces", in_path)->required();
    export_train->add_option("--out-dir", out_path)->required();
    export_train->callback([&] { action = [&] { return run_export_train(ctx, in_path, out_path); }; });

    auto* eval_retrieval = app.add_subcommand("eval-retrieval", "Precision at k of one or more indices");
    eval_retrieval->add_option("--index", indices, "Index file (repeatable, one table row each)")->required();
    eval_retrieval->add_option("--queries", queries)->required();
    eval_retrieval->add_option("--k", cutoffs, "Comma-separated cutoffs")->capture_default_str();
    eval_retrieval->add_option("--output", out_path, "Write the p@k report JSON here");
    eval_retrieval->callback([&] {
        action = [&] { return run_eval_retrieval(ctx, indices, queries, cutoffs, out_path); };
    });

    auto* eval_predict = app.add_subcommand("eval-predict", "Condition and disposition accuracy");
    std::string endpoint_role = "reasoner";
    eval_predict->add_option("--corpus", corpus)->required();
    eval_predict->add_option("--index", index_path);
    eval_predict->add_option("--queries", queries)->required();
    eval_predict->add_option("--endpoint", endpoint_role, "Endpoint entry to evaluate")->capture_default_str();
    eval_predict->add_option("--mode", mode, "text or tool");
    eval_predict->add_option("--runs", runs);
    eval_predict->add_option("--k", k);
    eval_predict->add_flag("--no-retrieval", no_retrieval, "Give the full condition list instead of retrieval");
    eval_predict->add_option("--label", label, "Row label in the printed table");
    eval_predict->add_option("--output", out_path, "Write the evaluation report JSON here");
    eval_predict->callback([&] {
        action = [&] {
            return run_eval_predict(ctx, corpus, index_path, queries, endpoint_role, mode, runs, k, no_retrieval,
                                    label, out_path);
        };
    });

    auto* serve = app.add_subcommand("serve", "Run the REST API");
    serve->add_option("--corpus", corpus)->required();
    serve->add_option("--index", index_path)->required();
    serve->add_option("--host", host);
    serve->add_option("--port", port);
    serve->add_option("--store", store, "Thread snapshot file");
    serve->callback([&] { action = [&] { return run_serve(ctx, corpus, index_path, host, port, store); }; });

    if (argc <= 1) {
        std::cerr << app.help();
        return 1;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return e.get_exit_code() ? e.get_exit_code() : 1;
    }

    try {
        ctx.load();
        return action ? action() : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int dispatch(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("rar");
    for (const auto& a : args)
        argv.push_back(a.c_str());
    return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace rar::cli
