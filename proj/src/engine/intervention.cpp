#include "laser/intervention.hpp"

#include "laser/error.hpp"
#include "laser/linalg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace laser {

using nlohmann::json;

std::string_view to_string(InterventionMethod method) {
    switch (method) {
    case InterventionMethod::svd_truncate:
        return "svd_truncate";
    case InterventionMethod::high_order_keep:
        return "high_order_keep";
    case InterventionMethod::magnitude_prune:
        return "magnitude_prune";
    case InterventionMethod::remove_layer:
        return "remove_layer";
    }
    return "?";
}

InterventionMethod parse_method(std::string_view name) {
    if (name == "svd_truncate") return InterventionMethod::svd_truncate;
    if (name == "high_order_keep") return InterventionMethod::high_order_keep;
    if (name == "magnitude_prune") return InterventionMethod::magnitude_prune;
    if (name == "remove_layer") return InterventionMethod::remove_layer;
    throw ArgumentError("unknown intervention method '" + std::string(name) + "'");
}

void validate_spec(const InterventionSpec& spec) {
    if (!(spec.rho >= 0.0 && spec.rho < 1.0)) {
        throw ArgumentError("rho must lie in [0, 1), got " + std::to_string(spec.rho));
    }
}

void validate_spec(const InterventionSpec& spec, const ModelConfig& config) {
    validate_spec(spec);
    if (spec.layer >= config.num_layers) {
        throw ArgumentError("intervention layer " + std::to_string(spec.layer) + " out of range (model has " +
                            std::to_string(config.num_layers) + " layers)");
    }
}

InterventionSpec parse_intervention_triple(std::string_view text) {
    std::string body(text);
    body.erase(std::remove_if(body.begin(), body.end(),
                              [](char c) { return c == '[' || c == ']' || c == '(' || c == ')'; }),
               body.end());
    std::vector<std::string> parts;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        const auto last = item.find_last_not_of(" \t");
        parts.push_back(first == std::string::npos ? "" : item.substr(first, last - first + 1));
    }
    if (parts.size() != 3) {
        throw ArgumentError("intervention triple must look like [tau, layer, rho]: '" + std::string(text) + "'");
    }
    InterventionSpec spec;
    spec.tau = parse_matrix_type(parts[0]);
    try {
        std::size_t used = 0;
        const long layer = std::stol(parts[1], &used);
        if (used != parts[1].size() || layer < 0) {
            throw ArgumentError("bad layer");
        }
        spec.layer = static_cast<std::size_t>(layer);
        spec.rho = std::stod(parts[2], &used);
        if (used != parts[2].size()) {
            throw ArgumentError("bad rho");
        }
    } catch (const std::logic_error&) {
        throw ArgumentError("intervention triple has a malformed layer or rho: '" + std::string(text) + "'");
    }
    spec.method = InterventionMethod::svd_truncate;
    validate_spec(spec);
    return spec;
}

std::string format_intervention_triple(const InterventionSpec& spec) {
    std::ostringstream out;
    out << "[" << to_string(spec.tau) << ", " << spec.layer << ", " << spec.rho << "]";
    return out.str();
}

void InterventionPlan::validate() const {
    std::set<Slot> seen;
    for (const auto& step : steps) {
        validate_spec(step);
        if (!seen.insert(step.slot()).second) {
            throw ArgumentError("plan repeats slot (" + std::string(to_string(step.tau)) + ", " +
                                std::to_string(step.layer) + ")");
        }
    }
}

json to_json(const InterventionSpec& spec) {
    return json{{"tau", to_string(spec.tau)},
                {"layer", spec.layer},
                {"rho", spec.rho},
                {"method", to_string(spec.method)}};
}

InterventionSpec spec_from_json(const json& j) {
    try {
        InterventionSpec spec;
        spec.tau = parse_matrix_type(j.at("tau").get<std::string>());
        spec.layer = j.at("layer").get<std::size_t>();
        spec.rho = j.at("rho").get<double>();
        spec.method = parse_method(j.value("method", std::string("svd_truncate")));
        validate_spec(spec);
        return spec;
    } catch (const json::exception& e) {
        throw FormatError(std::string("intervention spec: ") + e.what());
    }
}

json to_json(const InterventionPlan& plan) {
    json out = json::array();
    for (const auto& step : plan.steps) {
        out.push_back(to_json(step));
    }
    return out;
}

InterventionPlan plan_from_json(const json& j) {
    if (!j.is_array()) {
        throw FormatError("intervention plan must be a JSON array");
    }
    InterventionPlan plan;
    for (const auto& item : j) {
        plan.steps.push_back(spec_from_json(item));
    }
    plan.validate();
    return plan;
}

InterventionPlan read_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open plan file " + path.string());
    }
    try {
        return plan_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::size_t target_rank(std::pair<std::size_t, std::size_t> shape, double rho) {
    if (!(rho >= 0.0 && rho < 1.0)) {
        throw ArgumentError("rho must lie in [0, 1), got " + std::to_string(rho));
    }
    const std::size_t max_rank = std::min(shape.first, shape.second);
    return static_cast<std::size_t>(std::floor(rho * static_cast<double>(max_rank)));
}

Matrix magnitude_prune_count(const Matrix& w, std::size_t count) {
    if (count > w.size()) {
        throw ArgumentError("magnitude_prune: cannot zero " + std::to_string(count) + " of " +
                            std::to_string(w.size()) + " entries");
    }
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto data = w.data();
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(data[a]) < std::abs(data[b]); });
    Matrix out = w;
    for (std::size_t i = 0; i < count; ++i) {
        out.data()[order[i]] = 0.0;
    }
    return out;
}

Matrix magnitude_prune(const Matrix& w, double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ArgumentError("magnitude_prune: fraction must lie in [0, 1]");
    }
    const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(w.size())));
    return magnitude_prune_count(w, count);
}

Matrix intervened_matrix(const Matrix& w, const InterventionSpec& spec) {
    validate_spec(spec);
    const std::size_t rank = target_rank({w.rows(), w.cols()}, spec.rho);
    switch (spec.method) {
    case InterventionMethod::svd_truncate:
        return low_rank_approx(w, rank);
    case InterventionMethod::high_order_keep:
        return high_order_approx(w, rank);
    case InterventionMethod::magnitude_prune: {
        const auto keep = static_cast<std::size_t>(std::floor(spec.rho * static_cast<double>(w.size())));
        return magnitude_prune_count(w, w.size() - keep);
    }
    case InterventionMethod::remove_layer:
        return Matrix(w.rows(), w.cols());
    }
    throw ArgumentError("unknown intervention method");
}

TransformerModel apply_intervention(const TransformerModel& model, const InterventionSpec& spec) {
    validate_spec(spec, model.config());
    const Matrix& current = model.weight(spec.tau, spec.layer);
    return model.with_override(spec.tau, spec.layer, intervened_matrix(current, spec));
}

TransformerModel apply_plan(const TransformerModel& model, const InterventionPlan& plan) {
    plan.validate();
    TransformerModel out = model;
    for (const auto& step : plan.steps) {
        out = apply_intervention(out, step);
    }
    return out;
}

} // namespace laser
