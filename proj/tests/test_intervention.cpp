#include "doctest.h"

#include "helpers.hpp"
#include "oracles.hpp"

#include "laser/error.hpp"
#include "laser/inference.hpp"
#include "laser/intervention.hpp"
#include "laser/linalg.hpp"

#include <algorithm>
#include <cmath>

using namespace laser;

namespace {

// Entry i survives iff fewer than `keep` entries outrank it (larger magnitude,
// or equal magnitude at a later row-major position).
Matrix prune_oracle(const Matrix& w, std::size_t keep) {
    Matrix out = w;
    const auto d = w.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::size_t above = 0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            if (std::abs(d[j]) > std::abs(d[i]) || (std::abs(d[j]) == std::abs(d[i]) && j > i)) {
                ++above;
            }
        }
        if (above >= keep) {
            out.data()[i] = 0.0;
        }
    }
    return out;
}

} // namespace

TEST_CASE("method names") {
    for (auto m : {InterventionMethod::svd_truncate, InterventionMethod::high_order_keep,
                   InterventionMethod::magnitude_prune, InterventionMethod::remove_layer}) {
        CHECK(parse_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_method("dropout"), ArgumentError);
}

TEST_CASE("target rank is floor(rho * min(m, n))") {
    CHECK(target_rank({64, 256}, 0.9) == 57);
    CHECK(target_rank({64, 256}, 0.01) == 0);
    CHECK(target_rank({64, 256}, 0.0) == 0);
    CHECK(target_rank({256, 64}, 0.5) == 32);
    CHECK(target_rank({4096, 16384}, 0.01) == 40);
    CHECK_THROWS_AS(target_rank({4, 4}, 1.0), ArgumentError);
    CHECK_THROWS_AS(target_rank({4, 4}, -0.1), ArgumentError);
    CHECK_THROWS_AS(target_rank({4, 4}, std::nan("")), ArgumentError);
}

TEST_CASE("svd truncation installs a matrix of the target rank") {
    SeededRng rng(41);
    const Matrix w = oracle::random_matrix(rng, 16, 40);
    for (double rho : {0.9, 0.8, 0.6, 0.5, 0.25, 0.1, 0.05}) {
        InterventionSpec spec{MatrixType::u_in, 0, rho, InterventionMethod::svd_truncate};
        const Matrix r = intervened_matrix(w, spec);
        CHECK(numerical_rank(r) == target_rank({16, 40}, rho));
    }
    CHECK(intervened_matrix(w, {MatrixType::u_in, 0, 0.0}) == Matrix(16, 40));
}

TEST_CASE("high-order keep is the complement of truncation") {
    SeededRng rng(42);
    const Matrix w = oracle::random_matrix(rng, 12, 9);
    for (double rho : {0.0, 0.3, 0.5, 0.9}) {
        const Matrix lo = intervened_matrix(w, {MatrixType::wq, 0, rho, InterventionMethod::svd_truncate});
        const Matrix hi = intervened_matrix(w, {MatrixType::wq, 0, rho, InterventionMethod::high_order_keep});
        CHECK(relative_frobenius_error(lo + hi, w) < 1e-12);
        CHECK(numerical_rank(hi) == 9 - target_rank({12, 9}, rho));
    }
}

TEST_CASE("magnitude pruning matches the ranking oracle") {
    SeededRng rng(43);
    Matrix w = oracle::random_matrix(rng, 7, 6);
    // Planted ties at several magnitudes.
    w(0, 0) = 0.5;
    w(1, 1) = -0.5;
    w(2, 2) = 0.5;
    w(3, 3) = 0.0;
    w(4, 4) = 0.0;
    for (std::size_t keep = 0; keep <= w.size(); ++keep) {
        CAPTURE(keep);
        CHECK(magnitude_prune_count(w, w.size() - keep) == prune_oracle(w, keep));
    }
    for (double rho : {0.0, 0.1, 0.5, 0.9}) {
        const auto keep = static_cast<std::size_t>(std::floor(rho * 42.0));
        CHECK(intervened_matrix(w, {MatrixType::wq, 0, rho, InterventionMethod::magnitude_prune}) ==
              prune_oracle(w, keep));
    }
    CHECK(magnitude_prune(w, 1.0) == Matrix(7, 6));
    CHECK(magnitude_prune(w, 0.0) == w);
    CHECK_THROWS_AS(magnitude_prune(w, 1.5), ArgumentError);
}

TEST_CASE("remove layer zeroes the slot") {
    const auto model = testing::random_model(44);
    const auto out = apply_intervention(model, {MatrixType::wo, 1, 0.7, InterventionMethod::remove_layer});
    CHECK(out.weight(MatrixType::wo, 1) == Matrix(16, 16));
}

TEST_CASE("spec validation") {
    const auto config = testing::small_config();
    CHECK_THROWS_AS(validate_spec({MatrixType::wq, 0, 1.0}), ArgumentError);
    CHECK_THROWS_AS(validate_spec({MatrixType::wq, 2, 0.5}, config), ArgumentError);
    CHECK_NOTHROW(validate_spec({MatrixType::wq, 1, 0.5}, config));
    InterventionPlan dup{{{MatrixType::u_in, 1, 0.5}, {MatrixType::u_in, 1, 0.2}}};
    CHECK_THROWS_AS(dup.validate(), ArgumentError);
    InterventionPlan ok{{{MatrixType::u_in, 1, 0.5}, {MatrixType::u_out, 1, 0.2}}};
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("triple notation") {
    const auto s = parse_intervention_triple("[U_in, 27, 0.01]");
    CHECK(s.tau == MatrixType::u_in);
    CHECK(s.layer == 27);
    CHECK(s.rho == 0.01);
    CHECK(s.method == InterventionMethod::svd_truncate);
    CHECK(parse_intervention_triple(format_intervention_triple(s)) == s);
    CHECK(parse_intervention_triple(" [ W_q ,0, 0.5 ] ").tau == MatrixType::wq);
    CHECK(parse_intervention_triple("U_in, 27, 0.01") == s);
    CHECK_THROWS_AS(parse_intervention_triple("[U_in, 27]"), ArgumentError);
    CHECK_THROWS_AS(parse_intervention_triple("[U_in, x, 0.01]"), ArgumentError);
    CHECK_THROWS_AS(parse_intervention_triple("[U_in, 27, 1.5]"), ArgumentError);
    CHECK_THROWS_AS(parse_intervention_triple("[U_zz, 27, 0.5]"), ArgumentError);
}

TEST_CASE("plan JSON round-trip and errors") {
    InterventionPlan plan{{{MatrixType::u_out, 1, 0.1, InterventionMethod::svd_truncate},
                           {MatrixType::wk, 0, 0.5, InterventionMethod::magnitude_prune}}};
    CHECK(plan_from_json(to_json(plan)) == plan);
    CHECK(to_json(plan).is_array());
    CHECK(plan_from_json(nlohmann::json::array()).steps.empty());
    CHECK_THROWS_AS(plan_from_json(nlohmann::json::object()), FormatError);
    CHECK_THROWS_AS(spec_from_json({{"tau", "u_in"}}), FormatError);
    auto j = to_json(plan);
    j.push_back(j[0]);
    CHECK_THROWS_AS(plan_from_json(j), ArgumentError);
}

TEST_CASE("apply leaves the baseline intact and is deterministic") {
    const auto model = testing::random_model(45);
    const Matrix before = model.weight(MatrixType::u_in, 0);
    InterventionPlan plan{{{MatrixType::u_in, 0, 0.25}, {MatrixType::wv, 1, 0.5}}};
    const auto a = apply_plan(model, plan);
    const auto b = apply_plan(model, plan);
    CHECK(model.weight(MatrixType::u_in, 0) == before);
    CHECK_FALSE(model.has_override(MatrixType::u_in, 0));
    CHECK(a.weight(MatrixType::u_in, 0) == b.weight(MatrixType::u_in, 0));
    CHECK(forward(a, {1, 2, 3}) == forward(b, {1, 2, 3}));
    CHECK(apply_plan(model, {}).overridden_slots().empty());
    CHECK(forward(apply_plan(model, {}), {4, 5}) == forward(model, {4, 5}));
}

TEST_CASE("plan application is independent of step order") {
    const auto model = testing::random_model(46);
    InterventionPlan plan{{{MatrixType::u_in, 0, 0.25},
                           {MatrixType::wv, 1, 0.5},
                           {MatrixType::u_out, 1, 0.1, InterventionMethod::magnitude_prune},
                           {MatrixType::wq, 0, 0.3, InterventionMethod::high_order_keep}}};
    const auto reference = apply_plan(model, plan);
    auto steps = plan.steps;
    std::sort(steps.begin(), steps.end(), [](const auto& x, const auto& y) { return x.slot() < y.slot(); });
    do {
        const auto other = apply_plan(model, InterventionPlan{steps});
        for (const auto& s : plan.steps) {
            CHECK(other.weight(s.tau, s.layer) == reference.weight(s.tau, s.layer));
        }
    } while (std::next_permutation(steps.begin(), steps.end(),
                                   [](const auto& x, const auto& y) { return x.slot() < y.slot(); }));
}

TEST_CASE("truncation is idempotent at the same rho") {
    const auto model = testing::random_model(47);
    const InterventionSpec spec{MatrixType::u_out, 1, 0.5};
    const auto once = apply_intervention(model, spec);
    const auto twice = apply_intervention(once, spec);
    CHECK(relative_frobenius_error(twice.weight(MatrixType::u_out, 1), once.weight(MatrixType::u_out, 1)) < 1e-12);
}
