#include "laser/search.hpp"

#include "laser/error.hpp"
#include "laser/parallel.hpp"

#include <algorithm>
#include <set>

namespace laser {

using nlohmann::json;

namespace {

std::vector<std::size_t> layers_descending(const ModelConfig& config, const SearchConfig& search) {
    std::vector<std::size_t> layers = search.layers;
    if (layers.empty()) {
        for (std::size_t l = 0; l < config.num_layers; ++l) {
            layers.push_back(l);
        }
    }
    std::sort(layers.begin(), layers.end(), std::greater<>());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    return layers;
}

std::vector<double> rho_ascending(const SearchConfig& search) {
    std::vector<double> rhos = search.rho_grid;
    std::sort(rhos.begin(), rhos.end());
    rhos.erase(std::unique(rhos.begin(), rhos.end()), rhos.end());
    return rhos;
}

std::vector<MatrixType> taus_in_enum_order(const SearchConfig& search) {
    std::vector<MatrixType> taus = search.tau_set;
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    return taus;
}

std::vector<double> score_all(const std::vector<InterventionPlan>& plans, const PlanObjective& score,
                              std::size_t threads) {
    std::vector<double> out(plans.size());
    parallel_for(plans.size(), threads, [&](std::size_t i) { out[i] = score(plans[i]); });
    return out;
}

} // namespace

Objective parse_objective(std::string_view name) {
    if (name == "accuracy") return Objective::accuracy;
    if (name == "neg_loss" || name == "loss") return Objective::neg_loss;
    throw ArgumentError("unknown objective '" + std::string(name) + "'");
}

std::string_view to_string(Objective objective) {
    return objective == Objective::accuracy ? "accuracy" : "neg_loss";
}

void SearchConfig::validate(const ModelConfig& config) const {
    if (rho_grid.empty()) {
        throw ArgumentError("search: rho grid is empty");
    }
    for (double rho : rho_grid) {
        if (!(rho >= 0.0 && rho < 1.0)) {
            throw ArgumentError("search: rho values must lie in [0, 1)");
        }
    }
    if (tau_set.empty()) {
        throw ArgumentError("search: tau set is empty");
    }
    for (std::size_t l : layers) {
        if (l >= config.num_layers) {
            throw ArgumentError("search: layer " + std::to_string(l) + " out of range");
        }
    }
}

std::vector<InterventionSpec> single_step_candidates(const ModelConfig& config, const SearchConfig& search) {
    search.validate(config);
    std::vector<InterventionSpec> out;
    for (std::size_t layer : layers_descending(config, search)) {
        for (double rho : rho_ascending(search)) {
            for (MatrixType tau : taus_in_enum_order(search)) {
                out.push_back({tau, layer, rho, search.method});
            }
        }
    }
    return out;
}

SearchResult single_step_search(const ModelConfig& config, const SearchConfig& search, const PlanObjective& score) {
    std::vector<InterventionPlan> plans{InterventionPlan{}};
    for (const auto& spec : single_step_candidates(config, search)) {
        plans.push_back(InterventionPlan{{spec}});
    }
    const auto scores = score_all(plans, score, search.threads);

    SearchResult result;
    result.baseline_objective = scores.front();
    std::size_t best = 0;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        result.candidates.push_back({plans[i], scores[i]});
        if (scores[i] > scores[best]) {
            best = i;
        }
    }
    result.best = plans[best];
    result.best_objective = scores[best];
    return result;
}

SearchResult greedy_compose_search(const ModelConfig& config, const SearchConfig& search, const PlanObjective& score) {
    search.validate(config);
    SearchResult result;
    result.baseline_objective = score(InterventionPlan{});
    result.candidates.push_back({InterventionPlan{}, result.baseline_objective});

    InterventionPlan current;
    double current_score = result.baseline_objective;
    const auto rhos = rho_ascending(search);
    for (std::size_t layer : layers_descending(config, search)) {
        for (MatrixType tau : taus_in_enum_order(search)) {
            std::vector<InterventionPlan> plans;
            for (double rho : rhos) {
                InterventionPlan p = current;
                p.steps.push_back({tau, layer, rho, search.method});
                plans.push_back(std::move(p));
            }
            const auto scores = score_all(plans, score, search.threads);
            for (std::size_t i = 0; i < plans.size(); ++i) {
                result.candidates.push_back({plans[i], scores[i]});
            }
            for (std::size_t i = 0; i < plans.size(); ++i) {
                if (scores[i] > current_score) {
                    current = plans[i];
                    current_score = scores[i];
                    break;
                }
            }
        }
    }
    result.best = current;
    result.best_objective = current_score;
    return result;
}

double objective_value(const EvalAggregates& aggregates, Objective objective) {
    return objective == Objective::accuracy ? aggregates.accuracy : -aggregates.mean_loss;
}

PlanObjective model_objective(const TransformerModel& model, const std::vector<QASample>& samples,
                              const EvalOptions& options, Objective objective) {
    EvalOptions per_candidate = options;
    per_candidate.threads = 1;
    per_candidate.perplexity_corpus.clear();
    return [&model, &samples, per_candidate, objective](const InterventionPlan& plan) {
        const TransformerModel edited = apply_plan(model, plan);
        std::vector<SampleRecord> records(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            records[i] = evaluate_sample(edited, samples[i], per_candidate);
        }
        return objective_value(aggregate(records), objective);
    };
}

json to_json(const SearchResult& result) {
    json j;
    j["best"] = to_json(result.best);
    j["best_objective"] = result.best_objective;
    j["baseline_objective"] = result.baseline_objective;
    j["evaluations"] = result.candidates.size();
    j["candidates"] = json::array();
    for (const auto& c : result.candidates) {
        j["candidates"].push_back({{"plan", to_json(c.plan)}, {"objective", c.objective}});
    }
    return j;
}

SearchResult search_result_from_json(const json& j) {
    try {
        SearchResult r;
        r.best = plan_from_json(j.at("best"));
        r.best_objective = j.at("best_objective").get<double>();
        r.baseline_objective = j.at("baseline_objective").get<double>();
        for (const auto& c : j.at("candidates")) {
            r.candidates.push_back({plan_from_json(c.at("plan")), c.at("objective").get<double>()});
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("search result: ") + e.what());
    }
}

} // namespace laser
