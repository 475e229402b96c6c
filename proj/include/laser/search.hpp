#pragma once

#include "laser/dataset.hpp"
#include "laser/intervention.hpp"
#include "laser/metrics.hpp"
#include "laser/model.hpp"

#include "json.hpp"

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

namespace laser {

enum class Objective { accuracy, neg_loss };

Objective parse_objective(std::string_view name);
std::string_view to_string(Objective objective);

struct SearchConfig {
    std::vector<double> rho_grid = {0.9, 0.8, 0.6, 0.2, 0.1, 0.05, 0.01};
    std::vector<MatrixType> tau_set = {MatrixType::u_in, MatrixType::u_out};
    std::vector<std::size_t> layers; // empty means every layer
    Objective objective = Objective::accuracy;
    InterventionMethod method = InterventionMethod::svd_truncate;
    std::size_t threads = 1;

    void validate(const ModelConfig& config) const;
};

struct CandidateResult {
    InterventionPlan plan;
    double objective = 0.0;
    friend bool operator==(const CandidateResult&, const CandidateResult&) = default;
};

struct SearchResult {
    InterventionPlan best; // empty plan means the baseline won
    double best_objective = 0.0;
    double baseline_objective = 0.0;
    std::vector<CandidateResult> candidates; // every evaluated plan, baseline first
    friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

// Scores a plan (higher is better). Must be safe to call concurrently.
using PlanObjective = std::function<double(const InterventionPlan&)>;

// Single-step candidates in the canonical order used for tie-breaking:
// layers descending, then rho ascending, then tau in enum order.
std::vector<InterventionSpec> single_step_candidates(const ModelConfig& config, const SearchConfig& search);

// Evaluates the baseline and every single intervention; the first candidate in
// canonical order (baseline first) with the highest objective wins.
SearchResult single_step_search(const ModelConfig& config, const SearchConfig& search, const PlanObjective& score);

// Greedy composition: visits layers from last to first and tau in enum order,
// and for each slot adds the smallest rho that strictly improves the current
// plan's objective. Accepted steps are never revisited.
SearchResult greedy_compose_search(const ModelConfig& config, const SearchConfig& search, const PlanObjective& score);

double objective_value(const EvalAggregates& aggregates, Objective objective);

// Objective that applies the plan to `model` and evaluates `samples`.
PlanObjective model_objective(const TransformerModel& model, const std::vector<QASample>& samples,
                              const EvalOptions& options, Objective objective);

nlohmann::json to_json(const SearchResult& result);
SearchResult search_result_from_json(const nlohmann::json& j);

} // namespace laser
