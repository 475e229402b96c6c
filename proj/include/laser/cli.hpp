#pragma once

#include "laser/analysis.hpp"
#include "laser/dataset.hpp"
#include "laser/intervention.hpp"
#include "laser/metrics.hpp"
#include "laser/search.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace laser {

enum class SplitChoice { all, validation, test };

SplitChoice parse_split(std::string_view name);
std::string_view to_string(SplitChoice split);

struct RunConfig {
    std::filesystem::path model;
    std::filesystem::path dataset;
    std::filesystem::path plan;
    std::filesystem::path out = "out";
    std::string template_name = "raw";
    std::string metric = "generation";
    std::string objective = "accuracy";
    std::string method = "svd_truncate";
    SplitChoice split = SplitChoice::all;
    std::vector<double> rho_grid = SearchConfig{}.rho_grid;
    std::vector<std::string> tau_set = {"u_in", "u_out"};
    std::vector<std::size_t> layers;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::size_t max_new_tokens = 0;
    std::size_t top_k = 10;
    bool length_normalized = false;

    // analyze
    std::filesystem::path baseline_report;
    std::filesystem::path intervened_report;
    std::filesystem::path corpus;
    std::vector<std::uint64_t> bin_edges = {0, 1, 2, 4, 8, 16, 32, 64};
    std::vector<double> fractions = kDefaultHigherOrderFractions;
    std::vector<TokenId> generic_tokens; // empty = 20 most frequent corpus tokens
    std::optional<std::string> study_tau;
    std::optional<std::size_t> study_layer;
    bool sweep = false;

    EvalOptions eval_options() const;
    SearchConfig search_config() const;
};

// Unknown keys are rejected so typos do not silently fall back to defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

// SHA-256 of the canonical JSON of every setting that affects results; paths,
// output directory and thread count are excluded.
std::string config_hash(const RunConfig& config);

// Writes to "<path>.tmp" and renames over the target.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

// Subcommands. Each returns 0 on success and throws on error; run_command maps
// exceptions to messages on `log` and a nonzero exit code.
int cmd_apply(const RunConfig& config, std::ostream& log);
int cmd_eval(const RunConfig& config, std::ostream& log);
int cmd_search(const RunConfig& config, std::ostream& log);
int cmd_compose(const RunConfig& config, std::ostream& log);
int cmd_analyze(const RunConfig& config, std::ostream& log);
int cmd_effective_rank(const RunConfig& config, std::ostream& log);

int run_command(std::string_view name, const RunConfig& config, std::ostream& log);

} // namespace laser
