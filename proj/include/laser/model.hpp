#pragma once

#include "laser/matrix.hpp"

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace laser {

// The six per-layer intervention targets, in canonical (enum) order.
enum class MatrixType { wq, wk, wv, wo, u_in, u_out };

inline constexpr std::array<MatrixType, 6> kAllMatrixTypes = {
    MatrixType::wq, MatrixType::wk, MatrixType::wv, MatrixType::wo, MatrixType::u_in, MatrixType::u_out};

// Tensor-name spelling: "wq", "wk", "wv", "wo", "u_in", "u_out".
std::string_view to_string(MatrixType tau);

// Accepts the tensor-name spelling and the usual typographic variants
// ("U_in", "Uin", "W_q", ...), case-insensitively.
MatrixType parse_matrix_type(std::string_view name);

enum class Activation { relu, gelu };
enum class NormKind { pre_layernorm, post_layernorm };
// `reduced` marks checkpoints whose source architecture used features this
// engine does not model (e.g. rotary positions); logits are approximate.
enum class Fidelity { full, reduced };

struct ModelConfig {
    std::size_t num_layers = 1;
    std::size_t hidden_dim = 8;
    std::size_t num_heads = 1;
    std::size_t mlp_hidden_dim = 32;
    std::size_t vocab_size = 2;
    std::size_t max_context = 16;
    Activation activation = Activation::gelu;
    bool use_bias = true;
    NormKind norm_kind = NormKind::pre_layernorm;
    double layernorm_eps = 1e-5;
    Fidelity fidelity = Fidelity::full;

    void validate() const;
    std::size_t head_dim() const { return hidden_dim / num_heads; }

    // (rows, cols) of a taxonomy matrix under the row-vector convention
    // y = x W: attention matrices are d x d, U_in is d x mlp, U_out is mlp x d.
    std::pair<std::size_t, std::size_t> shape_of(MatrixType tau) const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerNormParams {
    std::vector<double> weight;
    std::vector<double> bias;
};

struct LayerWeights {
    std::array<Matrix, 6> matrices;            // indexed by MatrixType
    std::array<std::vector<double>, 6> biases; // empty when the config has no biases
    LayerNormParams ln1;
    LayerNormParams ln2;
};

struct ModelWeights {
    ModelConfig config;
    Matrix embedding;   // V x d
    Matrix position;    // T_max x d, learned absolute positions
    Matrix unembedding; // d x V
    std::vector<double> unembedding_bias; // optional, length V
    std::vector<LayerWeights> layers;
    LayerNormParams final_ln;
};

// All-zero weights with unit layer-norm gains.
ModelWeights make_zero_weights(const ModelConfig& config);

// Gaussian weights with standard deviation `scale`, unit-ish norm gains.
ModelWeights make_random_weights(const ModelConfig& config, std::uint64_t seed, double scale = 0.3);

// (tau, layer) address of an intervention target.
struct Slot {
    MatrixType tau = MatrixType::wq;
    std::size_t layer = 0;

    friend auto operator<=>(const Slot&, const Slot&) = default;
};

// Immutable model view: shared baseline weights plus a copy-on-write layer of
// per-slot overrides. Copies are cheap and never touch the baseline.
class TransformerModel {
public:
    explicit TransformerModel(ModelWeights weights);

    const ModelConfig& config() const noexcept { return base_->config; }
    const ModelWeights& baseline() const noexcept { return *base_; }

    // Effective matrix for a slot (override if present, baseline otherwise).
    const Matrix& weight(MatrixType tau, std::size_t layer) const;
    const Matrix& baseline_weight(MatrixType tau, std::size_t layer) const;
    std::span<const double> bias(MatrixType tau, std::size_t layer) const;
    const LayerWeights& layer(std::size_t layer) const;

    // New view whose slot is replaced by `replacement` (shape-checked).
    TransformerModel with_override(MatrixType tau, std::size_t layer, Matrix replacement) const;

    bool has_override(MatrixType tau, std::size_t layer) const;
    std::vector<Slot> overridden_slots() const;

    // Collapse overrides into a standalone weight set.
    ModelWeights materialize() const;

private:
    std::shared_ptr<const ModelWeights> base_;
    std::map<Slot, std::shared_ptr<const Matrix>> overrides_;
};

} // namespace laser
