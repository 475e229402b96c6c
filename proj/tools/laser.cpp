// laser: command-line front end for layer-selective rank reduction.
//
//   laser apply          --model m.ltc --plan plan.json [--dataset d.jsonl] --out dir
//   laser eval           --model m.ltc --dataset d.jsonl [--plan plan.json] --out dir
//   laser search|compose --model m.ltc --dataset d.jsonl --out dir
//   laser analyze        --baseline-report a.json --intervened-report b.json [--dataset ...] --out dir
//   laser effective-rank --model m.ltc --out dir
//
// A JSON file given with --config supplies defaults; explicit flags win.

#include "laser/cli.hpp"
#include "laser/error.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using nlohmann::json;

enum class Kind { text, integer, doubles, texts, integers, flag };

struct FlagSpec {
    const char* flag;
    const char* key;
    Kind kind;
    const char* help;
};

constexpr FlagSpec kFlags[] = {
    {"--model", "model", Kind::text, "model container (.ltc)"},
    {"--dataset", "dataset", Kind::text, "dataset JSONL"},
    {"--plan", "plan", Kind::text, "intervention plan JSON"},
    {"--out", "out", Kind::text, "output directory"},
    {"--template", "template", Kind::text, "prompt template"},
    {"--metric", "metric", Kind::text, "generation | classification | topk"},
    {"--objective", "objective", Kind::text, "search objective: accuracy | neg_loss"},
    {"--method", "method", Kind::text, "svd_truncate | high_order_keep | magnitude_prune | remove_layer"},
    {"--split", "split", Kind::text, "samples to evaluate: all | validation | test"},
    {"--rho-grid", "rho_grid", Kind::doubles, "comma-separated retained-rank fractions"},
    {"--tau-set", "tau_set", Kind::texts, "comma-separated matrix types"},
    {"--layers", "layers", Kind::integers, "comma-separated layer indices (default all)"},
    {"--seed", "seed", Kind::integer, "split seed"},
    {"--threads", "threads", Kind::integer, "worker threads"},
    {"--max-new-tokens", "max_new_tokens", Kind::integer, "greedy tokens per sample (0 = answer length)"},
    {"--top-k", "top_k", Kind::integer, "k for top-k accuracy"},
    {"--length-normalized", "length_normalized", Kind::flag, "normalize candidate scores by length"},
    {"--baseline-report", "baseline_report", Kind::text, "baseline EvalReport JSON"},
    {"--intervened-report", "intervened_report", Kind::text, "intervened EvalReport JSON"},
    {"--corpus", "corpus", Kind::text, "corpus directory or JSONL with a text field"},
    {"--bin-edges", "bin_edges", Kind::integers, "comma-separated frequency bin edges"},
    {"--fractions", "fractions", Kind::doubles, "higher-order study fractions"},
    {"--generic-tokens", "generic_tokens", Kind::integers, "token ids treated as generic"},
    {"--study-tau", "study_tau", Kind::text, "matrix type for the higher-order study"},
    {"--study-layer", "study_layer", Kind::integer, "layer for the higher-order study"},
    {"--sweep", "sweep", Kind::flag, "also write a per-layer sweep CSV"},
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) {
            out.push_back(item.substr(b, e - b + 1));
        }
    }
    return out;
}

json convert(const FlagSpec& spec, const std::string& raw) {
    try {
        switch (spec.kind) {
        case Kind::text:
            return raw;
        case Kind::integer:
            return std::stoull(raw);
        case Kind::doubles: {
            json arr = json::array();
            for (const auto& s : split_list(raw)) {
                arr.push_back(std::stod(s));
            }
            return arr;
        }
        case Kind::texts:
            return split_list(raw);
        case Kind::integers: {
            json arr = json::array();
            for (const auto& s : split_list(raw)) {
                arr.push_back(std::stoull(s));
            }
            return arr;
        }
        case Kind::flag:
            return true;
        }
    } catch (const std::logic_error&) {
        throw laser::ArgumentError(std::string(spec.flag) + ": cannot parse '" + raw + "'");
    }
    return nullptr;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw laser::ArgumentError("cannot open config " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw laser::FormatError(path + ": " + e.what());
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-selective rank reduction for transformer weights"};
    app.require_subcommand(1);

    const char* commands[][2] = {
        {"apply", "apply an intervention plan and write the edited model (and a report)"},
        {"eval", "evaluate a model on a dataset"},
        {"search", "single-step (tau, layer, rho) search on the validation split"},
        {"compose", "greedy multi-layer composition search"},
        {"analyze", "flip sets, frequency bins, higher-order study and sweeps"},
        {"effective-rank", "per-matrix effective rank CSV"},
    };

    std::string config_path;
    std::vector<std::string> raw(std::size(kFlags));
    std::vector<std::pair<CLI::App*, std::vector<CLI::Option*>>> subs;
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "JSON config file");
        std::vector<CLI::Option*> opts;
        for (std::size_t i = 0; i < std::size(kFlags); ++i) {
            if (kFlags[i].kind == Kind::flag) {
                opts.push_back(sub->add_flag(kFlags[i].flag, kFlags[i].help));
            } else {
                opts.push_back(sub->add_option(kFlags[i].flag, raw[i], kFlags[i].help));
            }
        }
        subs.emplace_back(sub, std::move(opts));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    for (const auto& [sub, opts] : subs) {
        if (!sub->parsed()) {
            continue;
        }
        try {
            json merged = config_path.empty() ? json::object() : read_json_file(config_path);
            for (std::size_t i = 0; i < opts.size(); ++i) {
                if (opts[i]->count() > 0) {
                    merged[kFlags[i].key] = convert(kFlags[i], raw[i]);
                }
            }
            const laser::RunConfig config = laser::run_config_from_json(merged);
            return laser::run_command(sub->get_name(), config, std::cerr);
        } catch (const laser::ArgumentError& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }
    return 2;
}
