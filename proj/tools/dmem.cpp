// dmem: ingest conversations into memory snapshots, answer questions under a
// routing policy, run benchmarks, and render reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmem/dmem.hpp"
#include "dmem/http_backend.hpp"

namespace fs = std::filesystem;
using namespace dmem;

namespace {

struct Stack {
    std::shared_ptr<Backend> backend;
    std::shared_ptr<PromptLibrary> prompts;
    std::unique_ptr<Gateway> gateway;
};

Stack make_stack(const RunConfig& cfg) {
    Stack s;
    if (cfg.backend == "scripted") {
        auto scripted = std::make_shared<ScriptedBackend>(cfg.embedding_dim);
        if (!cfg.script_path.empty()) {
            std::ifstream f(cfg.script_path);
            if (!f) throw FormatError("cannot open script file " + cfg.script_path);
            json doc = json::parse(f, nullptr, false);
            if (doc.is_discarded()) throw FormatError(cfg.script_path + ": not valid JSON");
            scripted->load_rules(doc);
        }
        s.backend = scripted;
    } else {
        HttpBackendConfig hc;
        hc.base_url = cfg.base_url;
        hc.chat_model = cfg.chat_model;
        hc.embed_model = cfg.embed_model;
        hc.embedding_dim = cfg.embedding_dim;
        const char* key = std::getenv(cfg.api_key_env.c_str());
        if (!key || !*key)
            throw InvalidArgument("backend \"http\" needs an API key in $" + cfg.api_key_env);
        hc.api_key = key;
        s.backend = std::make_shared<HttpBackend>(hc);
    }
    s.prompts = std::make_shared<PromptLibrary>(cfg.prompt_dir);
    GatewayOptions opt;
    opt.retries = cfg.retries;
    opt.retry_backoff_ms = cfg.retry_backoff_ms;
    opt.in_flight_limit = cfg.in_flight_limit;
    s.gateway = std::make_unique<Gateway>(s.backend, s.prompts, opt);
    return s;
}

BenchmarkOptions bench_options(const RunConfig& cfg, GatePolicy policy) {
    BenchmarkOptions opt;
    opt.mem0 = cfg.mem0;
    opt.deliberation = cfg.deliberation;
    // The filter step inside gated policies is opt-in; the "filter" policy
    // itself always carries it.
    if (!policy.use_filter && policy.kind != PolicyKind::AlwaysFast &&
        policy.kind != PolicyKind::AlwaysDeliberate)
        policy.use_filter = cfg.use_filter;
    policy.sample_count = cfg.sample_count;
    policy.sample_temperature = cfg.sample_temperature;
    opt.policy = policy;
    opt.bleu.smoothing_epsilon = cfg.bleu_smoothing_epsilon;
    return opt;
}

void write_or_fail(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path);
    f << body;
}

int cmd_ingest(const RunConfig& cfg, const std::string& dataset_path, const std::string& format,
               const std::string& out_dir) {
    auto ds = ingest_dataset(dataset_path, dataset_format_from_string(format));
    fs::create_directories(out_dir);
    Stack stack = make_stack(cfg);
    for (const auto& conv : ds.conversations) {
        MemoryStore store(stack.gateway->embedding_dimension());
        Mem0Star mem0(store, *stack.gateway, cfg.mem0);
        std::ofstream oplog(fs::path(out_dir) / (conv.id + ".ops.jsonl"));
        if (conv.messages.size() % 2 != 0)
            log::warn("conversation " + conv.id + ": odd trailing message not ingested");
        for (int t = 1; t <= conv.full_turns(); ++t) {
            try {
                auto result = mem0.ingest_turn(conv, t);
                for (const auto& op : result.applied) {
                    json line = {{"conversation", conv.id},
                                 {"turn", t},
                                 {"op", to_string(op.kind)}};
                    if (op.target_id) line["id"] = *op.target_id;
                    if (op.text) line["text"] = *op.text;
                    if (op.owner) line["owner"] = *op.owner;
                    oplog << line.dump() << "\n";
                }
            } catch (const Error& e) {
                log::warn("conversation " + conv.id + " turn " + std::to_string(t) +
                          ": " + e.what());
            }
        }
        std::string snap = (fs::path(out_dir) / (conv.id + ".snap")).string();
        store.snapshot(snap);
        log::info("wrote " + snap + " (" + std::to_string(store.size()) + " memories)");
    }
    return 0;
}

int cmd_ask(const RunConfig& cfg, const std::string& snapshot_path, const std::string& question,
            const std::string& policy_name, const std::string& dataset_path,
            const std::string& format, const std::string& conversation_id, bool as_json) {
    MemoryStore store = MemoryStore::load(snapshot_path);
    Stack stack = make_stack(cfg);
    if (store.dimension() != stack.gateway->embedding_dimension())
        throw InvalidArgument("snapshot dimension " + std::to_string(store.dimension()) +
                              " does not match backend embedding dimension " +
                              std::to_string(stack.gateway->embedding_dimension()));

    Conversation conv;
    if (!dataset_path.empty()) {
        auto ds = ingest_dataset(dataset_path, dataset_format_from_string(format));
        if (conversation_id.empty() && ds.conversations.size() != 1)
            throw InvalidArgument("dataset has " + std::to_string(ds.conversations.size()) +
                                  " conversations; pass --conversation");
        conv = ds.conversation(conversation_id.empty() ? ds.conversations[0].id : conversation_id);
    } else {
        // Without raw history only the fast paths can run; derive the two
        // speakers from the snapshot's owners.
        std::vector<std::string> owners;
        for (const auto& rec : store.all_records())
            if (std::find(owners.begin(), owners.end(), rec.owner) == owners.end())
                owners.push_back(rec.owner);
        if (owners.size() != 2)
            throw InvalidArgument("snapshot has " + std::to_string(owners.size()) +
                                  " owners; pass --dataset/--conversation to identify speakers");
        conv.id = "snapshot";
        conv.speakers = {owners[0], owners[1]};
    }

    GatePolicy policy = parse_policy(policy_name);
    policy.sample_count = cfg.sample_count;
    policy.sample_temperature = cfg.sample_temperature;
    if (!policy.use_filter && policy.kind != PolicyKind::AlwaysFast &&
        policy.kind != PolicyKind::AlwaysDeliberate)
        policy.use_filter = cfg.use_filter;
    if (conv.messages.empty() && policy.kind == PolicyKind::AlwaysDeliberate)
        throw InvalidArgument("always-deliberate needs raw history: pass --dataset");
    if (conv.messages.empty() && policy.kind != PolicyKind::AlwaysFast)
        log::warn("no raw history loaded; a fallback would deliberate over an empty conversation");

    Mem0Star mem0(store, *stack.gateway, cfg.mem0);
    Deliberator deliberator(mem0, *stack.gateway, cfg.deliberation);
    DMemEngine engine(mem0, deliberator, *stack.gateway);
    AnswerTrace trace = engine.answer(conv, question, policy);

    if (as_json) {
        std::cout << trace.to_json().dump(2) << "\n";
    } else {
        std::cout << trace.final_answer << "\n";
        std::cout << "path: " << to_string(trace.path) << "\n";
    }
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& dataset_path, const std::string& format,
              const std::string& policies_csv, const std::string& out_report,
              const std::string& out_csv, const std::string& out_traces) {
    auto ds = ingest_dataset(dataset_path, dataset_format_from_string(format));
    std::vector<MetricsReport> reports;
    std::ofstream traces;
    if (!out_traces.empty()) {
        traces.open(out_traces, std::ios::trunc);
        if (!traces) throw Error("cannot write " + out_traces);
    }
    for (const auto& name : text::split(policies_csv, ',')) {
        if (name.empty()) continue;
        GatePolicy policy = parse_policy(text::trim(name));
        // A fresh backend per policy run keeps scripted rule cycling and
        // accounting independent across rows.
        Stack stack = make_stack(cfg);
        auto out = run_benchmark(ds, bench_options(cfg, policy), *stack.gateway, *stack.gateway);
        log::info(policy_label(policy) + ": " + std::to_string(out.results.size()) +
                  " questions, fallback rate " +
                  std::to_string(out.report.fallback_rate_pct()) + "%");
        for (const auto& r : out.results) traces << r.to_json().dump() << "\n";
        reports.push_back(std::move(out.report));
    }
    std::string table = render_report(reports, ReportFormat::TableText);
    if (out_report.empty())
        std::cout << table;
    else
        write_or_fail(out_report, table);
    if (!out_csv.empty()) write_or_fail(out_csv, render_report(reports, ReportFormat::Csv));
    return 0;
}

int cmd_report(const std::vector<std::string>& trace_files, const std::string& format,
               const std::string& out_path) {
    std::vector<std::pair<std::string, std::vector<QuestionResult>>> groups;
    for (const auto& path : trace_files) {
        std::ifstream f(path);
        if (!f) throw FormatError("cannot open trace log " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (text::trim(line).empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded())
                throw FormatError(path + ":" + std::to_string(lineno) + ": not valid JSON");
            auto result = QuestionResult::from_json(j);
            std::string policy = result.trace.policy;
            auto it = std::find_if(groups.begin(), groups.end(),
                                   [&](const auto& g) { return g.first == policy; });
            if (it == groups.end()) {
                groups.push_back({policy, {}});
                it = groups.end() - 1;
            }
            it->second.push_back(std::move(result));
        }
    }
    std::vector<MetricsReport> reports;
    for (auto& [policy, results] : groups)
        reports.push_back(aggregate(results, parse_policy(policy)));
    std::string body = render_report(
        reports, format == "csv" ? ReportFormat::Csv : ReportFormat::TableText);
    if (out_path.empty())
        std::cout << body;
    else
        write_or_fail(out_path, body);
    return 0;
}

int cmd_inspect(const std::string& snapshot_path) {
    MemoryStore store = MemoryStore::load(snapshot_path);
    std::cout << "store: dimension " << store.dimension() << ", " << store.size() << " memories\n";
    for (const auto& rec : store.all_records()) {
        std::cout << "[" << rec.id << "] owner=" << rec.owner << " turns=" << rec.created_turn
                  << ".." << rec.updated_turn << "\n    " << rec.text << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    // Pass 1: pick up --config so its values become the defaults the flags
    // then override.
    RunConfig cfg;
    try {
        for (int i = 1; i + 1 < argc; ++i) {
            if (std::string(argv[i]) == "--config") {
                cfg = RunConfig::from_file(argv[i + 1]);
                break;
            }
        }
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"dmem: dual-process conversational memory engine"};
    app.require_subcommand(1);
    std::string config_path, log_level = "info";
    app.add_option("--config", config_path, "JSON config file (defaults < file < flags)");
    app.add_option("--log-level", log_level, "debug|info|warn|error")->capture_default_str();

    // Backend and pipeline flags; defaults come from the config file pass.
    app.add_option("--backend", cfg.backend, "scripted|http");
    app.add_option("--base-url", cfg.base_url);
    app.add_option("--chat-model", cfg.chat_model);
    app.add_option("--embed-model", cfg.embed_model);
    app.add_option("--api-key-env", cfg.api_key_env, "env var holding the API key");
    app.add_option("--script", cfg.script_path, "scripted backend rule file");
    app.add_option("--embedding-dim", cfg.embedding_dim);
    app.add_option("--retries", cfg.retries);
    app.add_option("--retry-backoff-ms", cfg.retry_backoff_ms);
    app.add_option("--in-flight-limit", cfg.in_flight_limit);
    app.add_option("--prompt-dir", cfg.prompt_dir);
    app.add_option("--extraction-top-k", cfg.mem0.extraction_top_k);
    app.add_option("--recent-window", cfg.mem0.recent_window);
    app.add_option("--update-top-k", cfg.mem0.update_top_k);
    app.add_option("--cosine-threshold", cfg.mem0.update_similarity_threshold);
    app.add_option("--query-top-k", cfg.mem0.query_top_k);
    app.add_option("--answer-temperature", cfg.mem0.answer_temperature);
    app.add_option("--chunk-size", cfg.deliberation.chunk_size);
    app.add_option("--history-size", cfg.deliberation.history_size);
    app.add_option("--fact-score-min", cfg.deliberation.fact_score_min);
    app.add_option("--fact-keep-threshold", cfg.deliberation.fact_keep_threshold);
    app.add_option("--llm-filter-min-facts", cfg.deliberation.llm_filter_min_facts);
    app.add_option("--parallelism", cfg.deliberation.parallelism);
    app.add_option("--sample-temperature", cfg.sample_temperature);
    app.add_option("--sample-count", cfg.sample_count);
    app.add_flag("--use-filter,!--no-use-filter", cfg.use_filter,
                 "filter context before gated answering");
    app.add_option("--bleu-smoothing-epsilon", cfg.bleu_smoothing_epsilon);

    auto* ingest = app.add_subcommand("ingest", "build memory snapshots from a dataset");
    std::string dataset_path, format = "normalized", out_dir = "snapshots";
    ingest->add_option("--dataset", dataset_path, "dataset file")->required();
    ingest->add_option("--format", format, "normalized|locomo|realtalk");
    ingest->add_option("--out", out_dir, "output directory");

    auto* ask = app.add_subcommand("ask", "answer one question against a snapshot");
    std::string snapshot_path, question, policy_name = cfg.policy, conv_id;
    bool as_json = false;
    ask->add_option("--snapshot", snapshot_path, "memory snapshot")->required();
    ask->add_option("--question", question)->required();
    ask->add_option("--policy", policy_name, "fast|filter|majority|consensus|quality|deliberate");
    ask->add_option("--dataset", dataset_path, "dataset file with the raw history");
    ask->add_option("--format", format, "normalized|locomo|realtalk");
    ask->add_option("--conversation", conv_id, "conversation id within the dataset");
    ask->add_flag("--json", as_json, "print the full trace as JSON");

    auto* bench = app.add_subcommand("bench", "run a benchmark and render reports");
    std::string policies = cfg.policy, out_report, out_csv, out_traces;
    bench->add_option("--dataset", dataset_path, "dataset file")->required();
    bench->add_option("--format", format, "normalized|locomo|realtalk");
    bench->add_option("--policies", policies, "comma-separated policy list");
    bench->add_option("--out-report", out_report, "write the text report here");
    bench->add_option("--out-csv", out_csv, "write the CSV report here");
    bench->add_option("--out-traces", out_traces, "write per-question JSONL traces here");

    auto* report = app.add_subcommand("report", "render reports from trace logs");
    std::vector<std::string> trace_files;
    std::string report_format = "text", report_out;
    report->add_option("--traces", trace_files, "trace log files")->required();
    report->add_option("--format", report_format, "text|csv");
    report->add_option("--out", report_out, "output path (stdout when omitted)");

    auto* inspect = app.add_subcommand("inspect-memory", "dump a snapshot human-readably");
    std::string inspect_snapshot;
    inspect->add_option("--snapshot", inspect_snapshot, "memory snapshot")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (log_level == "debug") log::threshold() = log::Level::Debug;
    else if (log_level == "warn") log::threshold() = log::Level::Warn;
    else if (log_level == "error") log::threshold() = log::Level::Error;

    try {
        cfg.validate();
        if (ingest->parsed()) return cmd_ingest(cfg, dataset_path, format, out_dir);
        if (ask->parsed())
            return cmd_ask(cfg, snapshot_path, question, policy_name, dataset_path, format,
                           conv_id, as_json);
        if (bench->parsed())
            return cmd_bench(cfg, dataset_path, format, policies, out_report, out_csv, out_traces);
        if (report->parsed()) return cmd_report(trace_files, report_format, report_out);
        if (inspect->parsed()) return cmd_inspect(inspect_snapshot);
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
