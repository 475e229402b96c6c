#pragma once

#include "laser/matrix.hpp"
#include "laser/model.hpp"

#include "json.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace laser {

enum class InterventionMethod {
    svd_truncate,    // keep the top floor(rho * min(m, n)) singular components
    high_order_keep, // drop those top components, keep the rest
    magnitude_prune, // keep the floor(rho * m * n) largest-magnitude entries
    remove_layer,    // replace the matrix by zeros (rho ignored)
};

std::string_view to_string(InterventionMethod method);
InterventionMethod parse_method(std::string_view name);

// A single (tau, layer, rho) rank-reduction step. rho is the fraction of the
// maximum rank that is preserved, in [0, 1).
struct InterventionSpec {
    MatrixType tau = MatrixType::u_in;
    std::size_t layer = 0;
    double rho = 0.0;
    InterventionMethod method = InterventionMethod::svd_truncate;

    Slot slot() const { return {tau, layer}; }
    friend bool operator==(const InterventionSpec&, const InterventionSpec&) = default;
};

// Validates rho and (when a model is given) the layer index.
void validate_spec(const InterventionSpec& spec);
void validate_spec(const InterventionSpec& spec, const ModelConfig& config);

// Parses the compact triple notation "[U_in, 27, 0.01]" (method svd_truncate).
InterventionSpec parse_intervention_triple(std::string_view text);
std::string format_intervention_triple(const InterventionSpec& spec);

// Ordered interventions on pairwise distinct slots.
struct InterventionPlan {
    std::vector<InterventionSpec> steps;

    // Throws ArgumentError on a repeated (tau, layer) slot.
    void validate() const;
    friend bool operator==(const InterventionPlan&, const InterventionPlan&) = default;
};

nlohmann::json to_json(const InterventionSpec& spec);
InterventionSpec spec_from_json(const nlohmann::json& j);
// Plans serialize as a JSON array of spec objects.
nlohmann::json to_json(const InterventionPlan& plan);
InterventionPlan plan_from_json(const nlohmann::json& j);
InterventionPlan read_plan(const std::filesystem::path& path);

// floor(rho * min(m, n)); 0 means the matrix is replaced by zeros.
std::size_t target_rank(std::pair<std::size_t, std::size_t> shape, double rho);

// Zeroes the floor(fraction * m * n) smallest-magnitude entries, earlier
// row-major positions first among equal magnitudes.
Matrix magnitude_prune(const Matrix& w, double fraction);

// Zeroes exactly `count` entries under the same ordering.
Matrix magnitude_prune_count(const Matrix& w, std::size_t count);

// The replacement matrix an intervention would install, computed from w.
Matrix intervened_matrix(const Matrix& w, const InterventionSpec& spec);

// New model view whose slot holds intervened_matrix(current slot weight). The
// baseline weights are never modified.
TransformerModel apply_intervention(const TransformerModel& model, const InterventionSpec& spec);

// Folds apply_intervention over the plan. Slots are distinct, so each step
// reads a matrix no other step touched and the result is order-independent.
TransformerModel apply_plan(const TransformerModel& model, const InterventionPlan& plan);

} // namespace laser
