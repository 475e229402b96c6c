#include "laser/model.hpp"

#include "laser/error.hpp"
#include "laser/random.hpp"

#include <algorithm>
#include <cctype>
#include <string>

namespace laser {

namespace {

std::size_t index_of(MatrixType tau) { return static_cast<std::size_t>(tau); }

std::string shape_string(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ArgumentError(name + ": expected shape " + shape_string(rows, cols) + ", got " +
                            shape_string(m.rows(), m.cols()));
    }
}

void check_vector(const std::vector<double>& v, std::size_t n, const std::string& name) {
    if (v.size() != n) {
        throw ArgumentError(name + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
    }
}

LayerNormParams unit_norm(std::size_t d) { return {std::vector<double>(d, 1.0), std::vector<double>(d, 0.0)}; }

} // namespace

std::string_view to_string(MatrixType tau) {
    switch (tau) {
    case MatrixType::wq:
        return "wq";
    case MatrixType::wk:
        return "wk";
    case MatrixType::wv:
        return "wv";
    case MatrixType::wo:
        return "wo";
    case MatrixType::u_in:
        return "u_in";
    case MatrixType::u_out:
        return "u_out";
    }
    return "?";
}

MatrixType parse_matrix_type(std::string_view name) {
    std::string key;
    for (char c : name) {
        if (c != '_' && c != ' ') {
            key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (key == "wq" || key == "q") return MatrixType::wq;
    if (key == "wk" || key == "k") return MatrixType::wk;
    if (key == "wv" || key == "v") return MatrixType::wv;
    if (key == "wo" || key == "o") return MatrixType::wo;
    if (key == "uin") return MatrixType::u_in;
    if (key == "uout") return MatrixType::u_out;
    throw ArgumentError("unknown matrix type '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
    if (num_layers < 1) throw ArgumentError("config: num_layers must be >= 1");
    if (vocab_size < 2) throw ArgumentError("config: vocab_size must be >= 2");
    if (hidden_dim < 1 || num_heads < 1 || mlp_hidden_dim < 1 || max_context < 1) {
        throw ArgumentError("config: dimensions must be positive");
    }
    if (hidden_dim % num_heads != 0) {
        throw ArgumentError("config: hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
                            std::to_string(num_heads));
    }
    if (!(layernorm_eps > 0.0)) throw ArgumentError("config: layernorm_eps must be positive");
}

std::pair<std::size_t, std::size_t> ModelConfig::shape_of(MatrixType tau) const {
    switch (tau) {
    case MatrixType::u_in:
        return {hidden_dim, mlp_hidden_dim};
    case MatrixType::u_out:
        return {mlp_hidden_dim, hidden_dim};
    default:
        return {hidden_dim, hidden_dim};
    }
}

ModelWeights make_zero_weights(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.hidden_dim;
    ModelWeights w;
    w.config = config;
    w.embedding = Matrix(config.vocab_size, d);
    w.position = Matrix(config.max_context, d);
    w.unembedding = Matrix(d, config.vocab_size);
    w.final_ln = unit_norm(d);
    w.layers.resize(config.num_layers);
    for (auto& layer : w.layers) {
        for (MatrixType tau : kAllMatrixTypes) {
            const auto [r, c] = config.shape_of(tau);
            layer.matrices[index_of(tau)] = Matrix(r, c);
            if (config.use_bias) {
                layer.biases[index_of(tau)].assign(c, 0.0);
            }
        }
        layer.ln1 = unit_norm(d);
        layer.ln2 = unit_norm(d);
    }
    return w;
}

ModelWeights make_random_weights(const ModelConfig& config, std::uint64_t seed, double scale) {
    ModelWeights w = make_zero_weights(config);
    SeededRng rng(seed);
    auto fill = [&](Matrix& m, double s) {
        for (double& x : m.data()) {
            x = s * rng.normal();
        }
    };
    auto fill_vec = [&](std::vector<double>& v, double center, double s) {
        for (double& x : v) {
            x = center + s * rng.normal();
        }
    };
    fill(w.embedding, 1.0);
    fill(w.position, 0.3);
    fill(w.unembedding, scale);
    for (auto& layer : w.layers) {
        for (MatrixType tau : kAllMatrixTypes) {
            fill(layer.matrices[index_of(tau)], scale);
            fill_vec(layer.biases[index_of(tau)], 0.0, 0.1);
        }
        fill_vec(layer.ln1.weight, 1.0, 0.1);
        fill_vec(layer.ln1.bias, 0.0, 0.1);
        fill_vec(layer.ln2.weight, 1.0, 0.1);
        fill_vec(layer.ln2.bias, 0.0, 0.1);
    }
    fill_vec(w.final_ln.weight, 1.0, 0.1);
    fill_vec(w.final_ln.bias, 0.0, 0.1);
    return w;
}

TransformerModel::TransformerModel(ModelWeights weights) {
    const ModelConfig& c = weights.config;
    c.validate();
    const std::size_t d = c.hidden_dim;
    check_matrix(weights.embedding, c.vocab_size, d, "embedding.weight");
    check_matrix(weights.position, c.max_context, d, "position.weight");
    check_matrix(weights.unembedding, d, c.vocab_size, "unembedding.weight");
    if (!weights.unembedding_bias.empty()) {
        check_vector(weights.unembedding_bias, c.vocab_size, "unembedding.bias");
    }
    if (weights.layers.size() != c.num_layers) {
        throw ArgumentError("model has " + std::to_string(weights.layers.size()) + " layers, config says " +
                            std::to_string(c.num_layers));
    }
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
        const auto& layer = weights.layers[l];
        const std::string prefix = "layers." + std::to_string(l) + ".";
        for (MatrixType tau : kAllMatrixTypes) {
            const auto [r, cols] = c.shape_of(tau);
            const std::string name = prefix + std::string(to_string(tau));
            check_matrix(layer.matrices[index_of(tau)], r, cols, name + ".weight");
            const auto& b = layer.biases[index_of(tau)];
            if (c.use_bias) {
                check_vector(b, cols, name + ".bias");
            } else if (!b.empty()) {
                throw ArgumentError(name + ".bias present but config.use_bias is false");
            }
        }
        check_vector(layer.ln1.weight, d, prefix + "ln1.weight");
        check_vector(layer.ln1.bias, d, prefix + "ln1.bias");
        check_vector(layer.ln2.weight, d, prefix + "ln2.weight");
        check_vector(layer.ln2.bias, d, prefix + "ln2.bias");
    }
    check_vector(weights.final_ln.weight, d, "final_ln.weight");
    check_vector(weights.final_ln.bias, d, "final_ln.bias");
    base_ = std::make_shared<const ModelWeights>(std::move(weights));
}

const LayerWeights& TransformerModel::layer(std::size_t layer) const {
    if (layer >= base_->layers.size()) {
        throw ArgumentError("layer " + std::to_string(layer) + " out of range (model has " +
                            std::to_string(base_->layers.size()) + " layers)");
    }
    return base_->layers[layer];
}

const Matrix& TransformerModel::baseline_weight(MatrixType tau, std::size_t l) const {
    return layer(l).matrices[index_of(tau)];
}

const Matrix& TransformerModel::weight(MatrixType tau, std::size_t l) const {
    if (!overrides_.empty()) {
        if (auto it = overrides_.find(Slot{tau, l}); it != overrides_.end()) {
            return *it->second;
        }
    }
    return baseline_weight(tau, l);
}

std::span<const double> TransformerModel::bias(MatrixType tau, std::size_t l) const {
    return layer(l).biases[index_of(tau)];
}

TransformerModel TransformerModel::with_override(MatrixType tau, std::size_t l, Matrix replacement) const {
    const Matrix& current = baseline_weight(tau, l);
    check_matrix(replacement, current.rows(), current.cols(),
                 "override layers." + std::to_string(l) + "." + std::string(to_string(tau)));
    TransformerModel out = *this;
    out.overrides_[Slot{tau, l}] = std::make_shared<const Matrix>(std::move(replacement));
    return out;
}

bool TransformerModel::has_override(MatrixType tau, std::size_t layer) const {
    return overrides_.contains(Slot{tau, layer});
}

std::vector<Slot> TransformerModel::overridden_slots() const {
    std::vector<Slot> out;
    out.reserve(overrides_.size());
    for (const auto& [slot, _] : overrides_) {
        out.push_back(slot);
    }
    return out;
}

ModelWeights TransformerModel::materialize() const {
    ModelWeights w = *base_;
    for (const auto& [slot, m] : overrides_) {
        w.layers[slot.layer].matrices[index_of(slot.tau)] = *m;
    }
    return w;
}

} // namespace laser
