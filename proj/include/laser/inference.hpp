#pragma once

#include "laser/matrix.hpp"
#include "laser/model.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace laser {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Incremental decoder with a per-layer key/value cache. Feeding tokens one at a
// time produces exactly the same arithmetic as a full forward pass (forward()
// is implemented on top of this), so cached and uncached paths agree bit for bit.
//
// A session is a value: copying it forks the decoding state.
class InferenceSession {
public:
    explicit InferenceSession(const TransformerModel& model);

    // Appends a token without computing next-token probabilities.
    void feed(TokenId token);

    // Appends a token and writes log p(next | prefix) for every vocabulary id into out.
    void feed(TokenId token, std::span<double> next_log_probs);

    std::size_t length() const noexcept { return length_; }
    std::size_t vocab_size() const noexcept { return model_->config().vocab_size; }

    // Records attention probabilities for subsequent tokens:
    // attention_rows()[layer][head] holds one row (length = position + 1) per fed token.
    void capture_attention(bool enabled) { capture_ = enabled; }
    const std::vector<std::vector<std::vector<std::vector<double>>>>& attention_rows() const { return attention_; }

private:
    void step(TokenId token, std::span<double> out);

    const TransformerModel* model_;
    std::size_t length_ = 0;
    std::vector<std::vector<double>> keys_;   // per layer, max_context x d
    std::vector<std::vector<double>> values_; // per layer, max_context x d
    bool capture_ = false;
    std::vector<std::vector<std::vector<std::vector<double>>>> attention_;
};

// T x V matrix of next-token log-probabilities; row t conditions on tokens[0..t].
Matrix forward(const TransformerModel& model, const TokenSequence& tokens);

struct ForwardTrace {
    Matrix log_probs;
    // attention[layer][head] is a T x T row-stochastic, lower-triangular matrix.
    std::vector<std::vector<Matrix>> attention;
};

ForwardTrace forward_traced(const TransformerModel& model, const TokenSequence& tokens);

// In-place log-softmax of a logit row.
void log_softmax_inplace(std::span<double> row);

// Highest-probability id; ties go to the lowest id.
TokenId argmax_token(std::span<const double> log_probs);

// k best ids in descending probability, ties by lowest id.
std::vector<TokenId> topk_from_log_probs(std::span<const double> log_probs, std::size_t k);

// Prompt followed by n_tokens greedily decoded tokens.
TokenSequence greedy_decode(const TransformerModel& model, const TokenSequence& prompt, std::size_t n_tokens);

// Mean negative log-probability of target given context, teacher-forced.
double sequence_log_loss(const TransformerModel& model, const TokenSequence& context, const TokenSequence& target);

// Summed log-probability of target given context (the quantity used to rank candidates).
double sequence_log_prob(const TransformerModel& model, const TokenSequence& context, const TokenSequence& target);

std::vector<TokenId> topk_tokens(const TransformerModel& model, const TokenSequence& prompt, std::size_t k);

// exp(mean NLL) over windows of length max_context advancing by `stride`; each
// window scores only the tokens not scored by the previous window.
double sliding_window_perplexity(const TransformerModel& model, const TokenSequence& corpus, std::size_t stride);

// Validates ids against the vocabulary and length against max_context.
void check_tokens(const TransformerModel& model, const TokenSequence& tokens);

} // namespace laser
