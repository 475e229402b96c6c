#include "laser/cli.hpp"

#include "laser/container.hpp"
#include "laser/error.hpp"
#include "laser/hashing.hpp"
#include "laser/linalg.hpp"
#include "laser/tokenizer.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>

namespace laser {

using nlohmann::json;

namespace {

struct Stamp {
    std::string config_hash;
    std::string model_hash;
    std::uint64_t seed = 0;

    std::string csv_line() const {
        return fmt::format("# config_hash={} model_hash={} seed={}\n", config_hash, model_hash, seed);
    }
    json as_json() const { return json{{"config_hash", config_hash}, {"model_hash", model_hash}, {"seed", seed}}; }
};

void require_path(const std::filesystem::path& p, const char* what) {
    if (p.empty()) {
        throw ArgumentError(std::string("--") + what + " is required");
    }
    if (!std::filesystem::exists(p)) {
        throw ArgumentError(std::string(what) + " path does not exist: " + p.string());
    }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::vector<QASample> load_samples(const RunConfig& c) {
    require_path(c.dataset, "dataset");
    return load_dataset(c.dataset, parse_template(c.template_name));
}

std::vector<QASample> select_split(std::vector<QASample> samples, const RunConfig& c) {
    if (c.split == SplitChoice::all) {
        return samples;
    }
    SplitDataset s = split(std::move(samples), c.seed);
    return c.split == SplitChoice::validation ? std::move(s.validation) : std::move(s.test);
}

InterventionPlan load_plan_or_empty(const RunConfig& c) {
    if (c.plan.empty()) {
        return {};
    }
    require_path(c.plan, "plan");
    return read_plan(c.plan);
}

void write_report(const std::filesystem::path& dir, const std::string& stem, EvalReport report, const Stamp& stamp,
                  const RunConfig& c, std::string_view split_name) {
    report.metadata["config_hash"] = stamp.config_hash;
    report.metadata["split_seed"] = c.seed;
    report.metadata["split"] = split_name;
    report.metadata["template"] = c.template_name;
    write_atomic(dir / (stem + ".json"), dump(to_json(report)));
    write_atomic(dir / (stem + ".csv"), to_csv(report));
}

std::string plan_label(const InterventionPlan& plan) {
    if (plan.steps.empty()) {
        return "baseline";
    }
    std::string out;
    for (const auto& s : plan.steps) {
        if (!out.empty()) {
            out += "+";
        }
        out += fmt::format("{}@{}:{}", to_string(s.tau), s.layer, s.rho);
    }
    return out;
}

int run_search(const RunConfig& c, std::ostream& log, bool compose) {
    require_path(c.model, "model");
    const TransformerModel model = load_model(c.model);
    SplitDataset data = split(load_samples(c), c.seed);
    const EvalOptions options = c.eval_options();
    const SearchConfig search = c.search_config();
    const PlanObjective objective = model_objective(model, data.validation, options, search.objective);

    log << fmt::format("{}: {} validation / {} test samples, objective {}\n", compose ? "compose" : "search",
                       data.validation.size(), data.test.size(), to_string(search.objective));
    const SearchResult result = compose ? greedy_compose_search(model.config(), search, objective)
                                        : single_step_search(model.config(), search, objective);
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
        log << fmt::format("  candidate {:>4} {:<32} {:.6f}\n", i, plan_label(result.candidates[i].plan),
                           result.candidates[i].objective);
    }
    log << fmt::format("winner {} objective {:.6f} (baseline {:.6f})\n", plan_label(result.best),
                       result.best_objective, result.baseline_objective);

    const Stamp stamp{config_hash(c), model_hash(model), c.seed};
    std::filesystem::create_directories(c.out);
    json out = to_json(result);
    out["metadata"] = stamp.as_json();
    out["metadata"]["mode"] = compose ? "compose" : "single_step";
    out["metadata"]["objective"] = to_string(search.objective);
    write_atomic(c.out / "search.json", dump(out));
    write_atomic(c.out / "plan.json", dump(to_json(result.best)));

    std::string csv = stamp.csv_line() + "index,plan,objective\n";
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
        csv += fmt::format("{},{},{}\n", i, plan_label(result.candidates[i].plan), result.candidates[i].objective);
    }
    write_atomic(c.out / "candidates.csv", csv);

    const TransformerModel winner = apply_plan(model, result.best);
    EvalOptions final_options = options;
    final_options.threads = c.threads;
    write_report(c.out, "validation_report", evaluate(winner, data.validation, final_options, result.best), stamp, c,
                 "validation");
    write_report(c.out, "test_report", evaluate(winner, data.test, final_options, result.best), stamp, c, "test");
    return 0;
}

std::map<std::string, std::uint64_t> dataset_frequencies(const std::vector<QASample>& samples) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& s : samples) {
        if (s.frequency) {
            out[s.id] = *s.frequency;
        }
    }
    return out;
}

bool covers(const std::map<std::string, std::uint64_t>& freq, const EvalReport& report) {
    return std::all_of(report.records.begin(), report.records.end(),
                       [&](const SampleRecord& r) { return freq.contains(r.id); });
}

} // namespace

SplitChoice parse_split(std::string_view name) {
    if (name == "all") return SplitChoice::all;
    if (name == "validation") return SplitChoice::validation;
    if (name == "test") return SplitChoice::test;
    throw ArgumentError("unknown split '" + std::string(name) + "' (expected all, validation or test)");
}

std::string_view to_string(SplitChoice split) {
    switch (split) {
    case SplitChoice::all:
        return "all";
    case SplitChoice::validation:
        return "validation";
    case SplitChoice::test:
        return "test";
    }
    return "?";
}

EvalOptions RunConfig::eval_options() const {
    EvalOptions o;
    o.metric = parse_metric(metric);
    o.max_new_tokens = max_new_tokens;
    o.top_k = top_k;
    o.length_normalized = length_normalized;
    o.threads = threads;
    return o;
}

SearchConfig RunConfig::search_config() const {
    SearchConfig s;
    s.rho_grid = rho_grid;
    s.tau_set.clear();
    for (const auto& t : tau_set) {
        s.tau_set.push_back(parse_matrix_type(t));
    }
    s.layers = layers;
    s.objective = parse_objective(objective);
    s.method = parse_method(method);
    s.threads = threads;
    return s;
}

RunConfig run_config_from_json(const json& j) {
    static const std::set<std::string> kKeys = {
        "model",      "dataset",     "plan",       "out",         "template",        "metric",
        "objective",  "method",      "split",      "rho_grid",    "tau_set",         "layers",
        "seed",       "threads",     "max_new_tokens", "top_k",   "length_normalized", "baseline_report",
        "intervened_report", "corpus", "bin_edges", "fractions",  "generic_tokens",  "study_tau",
        "study_layer", "sweep"};
    if (!j.is_object()) {
        throw FormatError("config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!kKeys.contains(key)) {
            throw FormatError("unknown config key '" + key + "'");
        }
    }
    try {
        RunConfig c;
        auto path = [&](const char* key, std::filesystem::path& dst) {
            if (j.contains(key)) dst = j.at(key).get<std::string>();
        };
        path("model", c.model);
        path("dataset", c.dataset);
        path("plan", c.plan);
        path("out", c.out);
        path("baseline_report", c.baseline_report);
        path("intervened_report", c.intervened_report);
        path("corpus", c.corpus);
        c.template_name = j.value("template", c.template_name);
        c.metric = j.value("metric", c.metric);
        c.objective = j.value("objective", c.objective);
        c.method = j.value("method", c.method);
        if (j.contains("split")) c.split = parse_split(j.at("split").get<std::string>());
        c.rho_grid = j.value("rho_grid", c.rho_grid);
        c.tau_set = j.value("tau_set", c.tau_set);
        c.layers = j.value("layers", c.layers);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
        c.top_k = j.value("top_k", c.top_k);
        c.length_normalized = j.value("length_normalized", c.length_normalized);
        c.bin_edges = j.value("bin_edges", c.bin_edges);
        c.fractions = j.value("fractions", c.fractions);
        c.generic_tokens = j.value("generic_tokens", c.generic_tokens);
        if (j.contains("study_tau") && !j.at("study_tau").is_null()) c.study_tau = j.at("study_tau").get<std::string>();
        if (j.contains("study_layer") && !j.at("study_layer").is_null())
            c.study_layer = j.at("study_layer").get<std::size_t>();
        c.sweep = j.value("sweep", c.sweep);
        return c;
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
}

json to_json(const RunConfig& c) {
    json j;
    j["model"] = c.model.string();
    j["dataset"] = c.dataset.string();
    j["plan"] = c.plan.string();
    j["out"] = c.out.string();
    j["baseline_report"] = c.baseline_report.string();
    j["intervened_report"] = c.intervened_report.string();
    j["corpus"] = c.corpus.string();
    j["template"] = c.template_name;
    j["metric"] = c.metric;
    j["objective"] = c.objective;
    j["method"] = c.method;
    j["split"] = to_string(c.split);
    j["rho_grid"] = c.rho_grid;
    j["tau_set"] = c.tau_set;
    j["layers"] = c.layers;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["max_new_tokens"] = c.max_new_tokens;
    j["top_k"] = c.top_k;
    j["length_normalized"] = c.length_normalized;
    j["bin_edges"] = c.bin_edges;
    j["fractions"] = c.fractions;
    j["generic_tokens"] = c.generic_tokens;
    j["study_tau"] = c.study_tau ? json(*c.study_tau) : json(nullptr);
    j["study_layer"] = c.study_layer ? json(*c.study_layer) : json(nullptr);
    j["sweep"] = c.sweep;
    return j;
}

std::string config_hash(const RunConfig& c) {
    json j = to_json(c);
    for (const char* key :
         {"model", "dataset", "plan", "out", "baseline_report", "intervened_report", "corpus", "threads"}) {
        j.erase(key);
    }
    return sha256_hex(j.dump());
}

void write_atomic(const std::filesystem::path& path, std::string_view contents) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw FormatError("cannot write " + tmp.string());
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw FormatError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

int cmd_apply(const RunConfig& c, std::ostream& log) {
    require_path(c.model, "model");
    const TransformerModel base = load_model(c.model);
    const InterventionPlan plan = load_plan_or_empty(c);
    log << fmt::format("apply: {} step(s)\n", plan.steps.size());
    const TransformerModel edited = apply_plan(base, plan);

    const Stamp stamp{config_hash(c), model_hash(edited), c.seed};
    std::filesystem::create_directories(c.out);
    LtcFile file = to_ltc(edited.materialize());
    file.metadata = stamp.as_json();
    file.metadata["plan"] = to_json(plan);
    file.metadata["source_model_hash"] = model_hash(base);
    const auto bytes = encode_ltc(file);
    write_atomic(c.out / "model.ltc", std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    write_atomic(c.out / "plan.json", dump(to_json(plan)));

    if (!c.dataset.empty()) {
        const auto samples = select_split(load_samples(c), c);
        log << fmt::format("apply: evaluating {} samples\n", samples.size());
        write_report(c.out, "report", evaluate(edited, samples, c.eval_options(), plan), stamp, c, to_string(c.split));
    }
    return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& log) {
    require_path(c.model, "model");
    const TransformerModel base = load_model(c.model);
    const InterventionPlan plan = load_plan_or_empty(c);
    const TransformerModel model = apply_plan(base, plan);
    const auto samples = select_split(load_samples(c), c);
    log << fmt::format("eval: {} samples, metric {}\n", samples.size(), c.metric);
    const EvalReport report = evaluate(model, samples, c.eval_options(), plan);
    log << fmt::format("eval: accuracy {:.6f} mean_loss {:.6f}\n", report.aggregates.accuracy,
                       report.aggregates.mean_loss);
    std::filesystem::create_directories(c.out);
    write_report(c.out, "report", report, Stamp{config_hash(c), model_hash(model), c.seed}, c, to_string(c.split));
    return 0;
}

int cmd_search(const RunConfig& c, std::ostream& log) { return run_search(c, log, false); }

int cmd_compose(const RunConfig& c, std::ostream& log) { return run_search(c, log, true); }

int cmd_analyze(const RunConfig& c, std::ostream& log) {
    require_path(c.baseline_report, "baseline-report");
    require_path(c.intervened_report, "intervened-report");
    const EvalReport baseline = read_report(c.baseline_report);
    const EvalReport intervened = read_report(c.intervened_report);
    const std::string baseline_hash = baseline.metadata.value("model_hash", std::string());
    const Stamp stamp{config_hash(c), baseline_hash, c.seed};
    std::filesystem::create_directories(c.out);

    const FlipSets flips = flip_sets(baseline, intervened);
    json flips_json = to_json(flips);
    flips_json["metadata"] = stamp.as_json();
    flips_json["metadata"]["intervened_model_hash"] = intervened.metadata.value("model_hash", std::string());
    write_atomic(c.out / "flip_sets.json", dump(flips_json));
    log << fmt::format("analyze: {} corrected, {} broken, {} kept, {} never\n", flips.answer_corrected.size(),
                       flips.answer_broken.size(), flips.originally_correct.size(), flips.never_correct.size());

    std::vector<QASample> samples;
    if (!c.dataset.empty()) {
        samples = load_samples(c);
    }
    std::vector<std::string> documents;
    if (!c.corpus.empty()) {
        require_path(c.corpus, "corpus");
        documents = load_corpus(c.corpus);
    }

    std::map<std::string, std::uint64_t> frequencies;
    if (!documents.empty() && !samples.empty()) {
        const Cooccurrence co = corpus_cooccurrence(documents, samples, c.threads);
        for (const auto& w : co.warnings) {
            log << "warning: " << w << "\n";
        }
        frequencies = co.counts;
        std::string csv = stamp.csv_line() + "id,count\n";
        for (const auto& [id, n] : co.counts) {
            csv += fmt::format("{},{}\n", id, n);
        }
        write_atomic(c.out / "cooccurrence.csv", csv);
    } else {
        frequencies = dataset_frequencies(samples);
    }
    if (covers(frequencies, baseline)) {
        const FrequencyBinReport bins = frequency_binned_boost(baseline, intervened, frequencies, c.bin_edges);
        json j = to_json(bins);
        j["metadata"] = stamp.as_json();
        write_atomic(c.out / "frequency_bins.json", dump(j));
        write_atomic(c.out / "frequency_bins.csv", stamp.csv_line() + to_csv(bins));
    } else {
        log << "warning: frequencies missing for some samples; frequency binning skipped\n";
    }

    const bool have_model = !c.model.empty();
    if (have_model && !samples.empty()) {
        require_path(c.model, "model");
        const TransformerModel model = load_model(c.model);

        std::optional<Slot> slot;
        const auto plan_meta = intervened.metadata.value("plan", json::array());
        if (c.study_tau && c.study_layer) {
            slot = Slot{parse_matrix_type(*c.study_tau), *c.study_layer};
        } else if (plan_meta.is_array() && !plan_meta.empty()) {
            slot = plan_from_json(plan_meta).steps.front().slot();
        }
        std::vector<QASample> corrected;
        for (const auto& s : samples) {
            if (flips.answer_corrected.contains(s.id)) {
                corrected.push_back(s);
            }
        }
        if (!slot) {
            log << "warning: no intervention slot known; higher-order study skipped\n";
        } else if (corrected.empty()) {
            log << "warning: no answer-corrected samples; higher-order study skipped\n";
        } else {
            std::vector<TokenId> generic = c.generic_tokens;
            if (generic.empty()) {
                std::vector<TokenSequence> seqs;
                if (!documents.empty()) {
                    for (const auto& d : documents) {
                        seqs.push_back(ByteTokenizer::encode(d));
                    }
                } else {
                    for (const auto& s : samples) {
                        seqs.push_back(s.ids_mode ? s.prompt_ids : ByteTokenizer::encode(s.prompt));
                    }
                }
                generic = most_frequent_tokens(seqs, 20);
            }
            const HigherOrderStudy study =
                higher_order_study(model, corrected, slot->tau, slot->layer, c.fractions, generic);
            json j = to_json(study);
            j["metadata"] = stamp.as_json();
            j["generic_tokens"] = generic;
            write_atomic(c.out / "higher_order.json", dump(j));
            write_atomic(c.out / "higher_order.csv", stamp.csv_line() + to_csv(study));
        }

        if (c.sweep) {
            SplitDataset data = split(samples, c.seed);
            const SearchConfig search = c.search_config();
            const LayerSweep sweep = layer_sweep(
                model.config(), search, model_objective(model, data.validation, c.eval_options(), search.objective));
            write_atomic(c.out / "layer_sweep.csv", stamp.csv_line() + to_csv(sweep));
        }
    } else if (c.sweep) {
        log << "warning: layer sweep needs --model and --dataset; skipped\n";
    }
    return 0;
}

int cmd_effective_rank(const RunConfig& c, std::ostream& log) {
    require_path(c.model, "model");
    const TransformerModel model = load_model(c.model);
    const Stamp stamp{config_hash(c), model_hash(model), c.seed};
    std::string csv = stamp.csv_line() + "tau,layer,rows,cols,effective_rank\n";
    for (std::size_t l = 0; l < model.config().num_layers; ++l) {
        for (MatrixType tau : kAllMatrixTypes) {
            const Matrix& w = model.weight(tau, l);
            csv += fmt::format("{},{},{},{},{}\n", to_string(tau), l, w.rows(), w.cols(), effective_rank(w));
        }
    }
    log << fmt::format("effective-rank: {} matrices\n", 6 * model.config().num_layers);
    std::filesystem::create_directories(c.out);
    write_atomic(c.out / "effective_rank.csv", csv);
    return 0;
}

int run_command(std::string_view name, const RunConfig& config, std::ostream& log) {
    try {
        if (name == "apply") return cmd_apply(config, log);
        if (name == "eval") return cmd_eval(config, log);
        if (name == "search") return cmd_search(config, log);
        if (name == "compose") return cmd_compose(config, log);
        if (name == "analyze") return cmd_analyze(config, log);
        if (name == "effective-rank") return cmd_effective_rank(config, log);
        throw ArgumentError("unknown command '" + std::string(name) + "'");
    } catch (const ArgumentError& e) {
        log << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace laser
