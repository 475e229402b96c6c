#include "doctest.h"

#include "helpers.hpp"

#include "laser/error.hpp"
#include "laser/intervention.hpp"
#include "laser/metrics.hpp"
#include "laser/search.hpp"

#include <algorithm>
#include <map>
#include <sstream>

using namespace laser;

namespace {

// Order-free identity of a plan.
std::string plan_key(const InterventionPlan& plan) {
    auto steps = plan.steps;
    std::sort(steps.begin(), steps.end(), [](const auto& a, const auto& b) { return a.slot() < b.slot(); });
    std::ostringstream out;
    for (const auto& s : steps) {
        out << to_string(s.tau) << "@" << s.layer << ":" << s.rho << ";";
    }
    return out.str();
}

// Every plan that uses each slot of `slots` at most once, with any grid rho.
std::vector<InterventionPlan> all_plans(const std::vector<Slot>& slots, const std::vector<double>& grid) {
    std::vector<InterventionPlan> out{InterventionPlan{}};
    for (const Slot& slot : slots) {
        std::vector<InterventionPlan> next = out;
        for (const auto& p : out) {
            for (double rho : grid) {
                InterventionPlan q = p;
                q.steps.push_back({slot.tau, slot.layer, rho});
                next.push_back(q);
            }
        }
        out = std::move(next);
    }
    return out;
}

// The greedy composition rule, replayed against a precomputed score table.
std::pair<std::string, double> replay_greedy(const std::map<std::string, double>& table,
                                             const std::vector<std::size_t>& layers_desc,
                                             const std::vector<MatrixType>& taus, std::vector<double> grid) {
    std::sort(grid.begin(), grid.end());
    InterventionPlan current;
    double score = table.at(plan_key(current));
    for (std::size_t layer : layers_desc) {
        for (MatrixType tau : taus) {
            for (double rho : grid) {
                InterventionPlan cand = current;
                cand.steps.push_back({tau, layer, rho});
                const double s = table.at(plan_key(cand));
                if (s > score) {
                    current = cand;
                    score = s;
                    break;
                }
            }
        }
    }
    return {plan_key(current), score};
}

// Samples whose answers are the next token predicted by `teacher`, so plans
// close to the teacher's edit score well under the accuracy objective.
std::vector<QASample> planted_samples(const TransformerModel& teacher, std::uint64_t seed, std::size_t n) {
    auto samples = testing::random_samples(seed, n, 5, 1);
    for (auto& s : samples) {
        const auto enc = encode_sample(s);
        const auto next = topk_tokens(teacher, enc.prompt, 1).front();
        s.answer = std::string(1, static_cast<char>(next));
        s.answer_text = s.answer;
    }
    return samples;
}

} // namespace

TEST_CASE("objective names") {
    CHECK(parse_objective("accuracy") == Objective::accuracy);
    CHECK(parse_objective("neg_loss") == Objective::neg_loss);
    CHECK(parse_objective("loss") == Objective::neg_loss);
    CHECK_THROWS_AS(parse_objective("f1"), ArgumentError);
    EvalAggregates a;
    a.accuracy = 0.25;
    a.mean_loss = 1.5;
    CHECK(objective_value(a, Objective::accuracy) == 0.25);
    CHECK(objective_value(a, Objective::neg_loss) == -1.5);
}

TEST_CASE("search configuration validation") {
    const auto c = testing::small_config();
    SearchConfig s;
    CHECK_NOTHROW(s.validate(c));
    s.rho_grid = {};
    CHECK_THROWS_AS(s.validate(c), ArgumentError);
    s.rho_grid = {1.0};
    CHECK_THROWS_AS(s.validate(c), ArgumentError);
    s = {};
    s.tau_set = {};
    CHECK_THROWS_AS(s.validate(c), ArgumentError);
    s = {};
    s.layers = {2};
    CHECK_THROWS_AS(s.validate(c), ArgumentError);
}

TEST_CASE("single-step candidates come in canonical order") {
    SearchConfig s;
    s.rho_grid = {0.5, 0.1};
    s.tau_set = {MatrixType::u_out, MatrixType::wq};
    const auto c = single_step_candidates(testing::small_config(), s);
    const std::vector<InterventionSpec> expect{
        {MatrixType::wq, 1, 0.1},  {MatrixType::u_out, 1, 0.1}, {MatrixType::wq, 1, 0.5},
        {MatrixType::u_out, 1, 0.5}, {MatrixType::wq, 0, 0.1},  {MatrixType::u_out, 0, 0.1},
        {MatrixType::wq, 0, 0.5},  {MatrixType::u_out, 0, 0.5},
    };
    CHECK(c == expect);
    s.layers = {0};
    CHECK(single_step_candidates(testing::small_config(), s).size() == 4);
}

TEST_CASE("single-step search on a synthetic table with planted ties") {
    const auto config = testing::small_config();
    SearchConfig s;
    s.rho_grid = {0.5, 0.1};
    // Two candidates tie for the maximum; the earlier one in canonical order wins.
    const std::map<std::string, double> table{
        {"", 0.3},
        {"u_in@1:0.1;", 0.1},
        {"u_out@1:0.1;", 0.2},
        {"u_in@1:0.5;", 0.7},
        {"u_out@1:0.5;", 0.4},
        {"u_in@0:0.1;", 0.7},
        {"u_out@0:0.1;", 0.0},
        {"u_in@0:0.5;", 0.6},
        {"u_out@0:0.5;", 0.7},
    };
    const PlanObjective score = [&](const InterventionPlan& p) { return table.at(plan_key(p)); };
    const SearchResult r = single_step_search(config, s, score);
    CHECK(plan_key(r.best) == "u_in@1:0.5;");
    CHECK(r.best_objective == 0.7);
    CHECK(r.baseline_objective == 0.3);
    REQUIRE(r.candidates.size() == 9);
    CHECK(r.candidates[0].plan.steps.empty());

    // When nothing beats the baseline, the empty plan wins, even against equal scores.
    const PlanObjective flat = [](const InterventionPlan&) { return 0.5; };
    const SearchResult f = single_step_search(config, s, flat);
    CHECK(f.best.steps.empty());
    CHECK(f.best_objective == 0.5);
}

TEST_CASE("greedy composition on a synthetic table") {
    const auto config = testing::small_config();
    SearchConfig s;
    s.rho_grid = {0.5, 0.1};
    const auto plans = all_plans({{MatrixType::u_in, 0}, {MatrixType::u_out, 0}, {MatrixType::u_in, 1},
                                  {MatrixType::u_out, 1}},
                                 s.rho_grid);
    CHECK(plans.size() == 81);
    std::map<std::string, double> table;
    SeededRng rng(61);
    for (const auto& p : plans) {
        // Coarse values make exact ties common.
        table[plan_key(p)] = static_cast<double>(rng.below(5));
    }
    const PlanObjective score = [&](const InterventionPlan& p) { return table.at(plan_key(p)); };
    const SearchResult r = greedy_compose_search(config, s, score);
    const auto expect = replay_greedy(table, {1, 0}, {MatrixType::u_in, MatrixType::u_out}, s.rho_grid);
    CHECK(plan_key(r.best) == expect.first);
    CHECK(r.best_objective == expect.second);
    CHECK(r.best_objective >= r.baseline_objective);
    // Baseline plus one evaluation per (slot, rho).
    CHECK(r.candidates.size() == 1 + 4 * 2);
}

TEST_CASE("searches agree with an exhaustive table on a tiny model") {
    const ModelConfig config = testing::small_config(2, 8, 2, 16, 259, 16);
    const TransformerModel model = testing::random_model(62, config, 0.8);
    const SearchConfig defaults;
    const auto plans = all_plans({{MatrixType::u_in, 0}, {MatrixType::u_out, 0}, {MatrixType::u_in, 1},
                                  {MatrixType::u_out, 1}},
                                 defaults.rho_grid);
    REQUIRE(plans.size() == 4096);

    const TransformerModel teacher = apply_plan(model, {{{MatrixType::u_out, 1, 0.2}, {MatrixType::u_in, 0, 0.6}}});
    const auto samples = planted_samples(teacher, 63, 12);
    EvalOptions options;
    options.paraphrases = false;

    for (Objective objective : {Objective::accuracy, Objective::neg_loss}) {
        CAPTURE(to_string(objective));
        const PlanObjective score = model_objective(model, samples, options, objective);
        std::map<std::string, double> table;
        for (const auto& p : plans) {
            table[plan_key(p)] = score(p);
        }

        SearchConfig s;
        s.objective = objective;
        const SearchResult greedy = greedy_compose_search(config, s, score);
        const auto expect = replay_greedy(table, {1, 0}, {MatrixType::u_in, MatrixType::u_out}, s.rho_grid);
        CHECK(plan_key(greedy.best) == expect.first);
        CHECK(greedy.best_objective == expect.second);
        for (const auto& c : greedy.candidates) {
            CHECK(c.objective == table.at(plan_key(c.plan)));
        }

        const SearchResult single = single_step_search(config, s, score);
        std::string best_key;
        double best = table.at("");
        for (const auto& spec : single_step_candidates(config, s)) {
            const double v = table.at(plan_key({{spec}}));
            if (v > best) {
                best = v;
                best_key = plan_key({{spec}});
            }
        }
        CHECK(plan_key(single.best) == best_key);
        CHECK(single.best_objective == best);
        CHECK(single.candidates.size() == 1 + 2 * 2 * 7);
    }
}

TEST_CASE("search results do not depend on the thread count") {
    const ModelConfig config = testing::small_config(2, 8, 2, 16, 259, 16);
    const TransformerModel model = testing::random_model(64, config, 0.8);
    const auto samples = testing::random_samples(65, 10, 5, 1);
    EvalOptions options;
    SearchConfig s;
    s.objective = Objective::neg_loss;
    s.tau_set = {MatrixType::wq, MatrixType::wv, MatrixType::u_in, MatrixType::u_out};
    const auto score = model_objective(model, samples, options, s.objective);
    s.threads = 1;
    const SearchResult g1 = greedy_compose_search(config, s, score);
    const SearchResult s1 = single_step_search(config, s, score);
    for (std::size_t t : {4u, 8u}) {
        s.threads = t;
        CHECK(greedy_compose_search(config, s, score) == g1);
        CHECK(single_step_search(config, s, score) == s1);
    }
    CHECK(to_json(g1).dump() == to_json(search_result_from_json(to_json(g1))).dump());
    CHECK(search_result_from_json(to_json(s1)) == s1);
}

TEST_CASE("the chosen plan never scores below the baseline") {
    const ModelConfig config = testing::small_config(2, 8, 2, 16, 259, 16);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CAPTURE(seed);
        const TransformerModel model = testing::random_model(100 + seed, config, 0.8);
        const auto samples = testing::random_samples(200 + seed, 8, 4, 1);
        SearchConfig s;
        s.objective = seed % 2 == 0 ? Objective::accuracy : Objective::neg_loss;
        const auto score = model_objective(model, samples, EvalOptions{}, s.objective);
        const SearchResult single = single_step_search(config, s, score);
        const SearchResult greedy = greedy_compose_search(config, s, score);
        CHECK(single.best_objective >= single.baseline_objective);
        CHECK(greedy.best_objective >= greedy.baseline_objective);
        CHECK(single.best_objective == score(single.best));
        CHECK(greedy.best_objective == score(greedy.best));
    }
}

TEST_CASE("a one-element grid over one slot evaluates two plans") {
    const ModelConfig config = testing::small_config();
    SearchConfig s;
    s.rho_grid = {0.5};
    s.tau_set = {MatrixType::u_in};
    s.layers = {1};
    std::size_t calls = 0;
    const PlanObjective score = [&](const InterventionPlan& p) {
        ++calls;
        return p.steps.empty() ? 0.0 : 1.0;
    };
    const SearchResult r = single_step_search(config, s, score);
    CHECK(calls == 2);
    CHECK(r.candidates.size() == 2);
    CHECK(plan_key(r.best) == "u_in@1:0.5;");
    calls = 0;
    CHECK(greedy_compose_search(config, s, score).candidates.size() == 2);
    CHECK(calls == 2);
}
