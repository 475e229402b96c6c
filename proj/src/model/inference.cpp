#include "laser/inference.hpp"

#include "laser/error.hpp"
#include "laser/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace laser {

namespace {

void layer_norm(std::span<const double> x, const LayerNormParams& p, double eps, std::span<double> out) {
    const auto n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) {
        mean += v;
    }
    mean /= n;
    double var = 0.0;
    for (double v : x) {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = (x[i] - mean) * inv * p.weight[i] + p.bias[i];
    }
}

double activate(Activation act, double x) {
    if (act == Activation::relu) {
        return x > 0.0 ? x : 0.0;
    }
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

// out = x W (+ b)
void project(std::span<const double> x, const Matrix& w, std::span<const double> b, std::span<double> out) {
    row_times(x, w, out);
    if (!b.empty()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += b[i];
        }
    }
}

} // namespace

void check_tokens(const TransformerModel& model, const TokenSequence& tokens) {
    const auto& c = model.config();
    if (tokens.size() > c.max_context) {
        throw ArgumentError("sequence of length " + std::to_string(tokens.size()) + " exceeds max_context " +
                            std::to_string(c.max_context));
    }
    for (TokenId t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
            throw ArgumentError("token id " + std::to_string(t) + " outside vocabulary of size " +
                                std::to_string(c.vocab_size));
        }
    }
}

InferenceSession::InferenceSession(const TransformerModel& model)
    : model_(&model),
      keys_(model.config().num_layers, std::vector<double>(model.config().max_context * model.config().hidden_dim)),
      values_(model.config().num_layers,
              std::vector<double>(model.config().max_context * model.config().hidden_dim)) {}

void InferenceSession::feed(TokenId token) { step(token, {}); }

void InferenceSession::feed(TokenId token, std::span<double> next_log_probs) {
    if (next_log_probs.size() != vocab_size()) {
        throw ArgumentError("log-prob buffer has " + std::to_string(next_log_probs.size()) + " entries, vocab is " +
                            std::to_string(vocab_size()));
    }
    step(token, next_log_probs);
}

void InferenceSession::step(TokenId token, std::span<double> out) {
    const TransformerModel& model = *model_;
    const ModelConfig& c = model.config();
    const ModelWeights& base = model.baseline();
    if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
        throw ArgumentError("token id " + std::to_string(token) + " outside vocabulary of size " +
                            std::to_string(c.vocab_size));
    }
    if (length_ >= c.max_context) {
        throw ArgumentError("sequence exceeds max_context " + std::to_string(c.max_context));
    }
    const std::size_t pos = length_;
    const std::size_t d = c.hidden_dim;
    const std::size_t heads = c.num_heads;
    const std::size_t hd = c.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool pre = c.norm_kind == NormKind::pre_layernorm;

    std::vector<double> x(d);
    const auto emb = base.embedding.row(static_cast<std::size_t>(token));
    const auto pe = base.position.row(pos);
    for (std::size_t i = 0; i < d; ++i) {
        x[i] = emb[i] + pe[i];
    }

    std::vector<double> a(d), q(d), z(d), o(d), u(d), m(d), f(d), y(d);
    std::vector<double> hidden(c.mlp_hidden_dim);
    std::vector<double> scores(pos + 1);

    if (capture_ && attention_.empty()) {
        attention_.assign(c.num_layers, std::vector<std::vector<std::vector<double>>>(heads));
    }

    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const LayerWeights& lw = base.layers[l];
        if (pre) {
            layer_norm(x, lw.ln1, c.layernorm_eps, a);
        } else {
            a = x;
        }
        double* kl = keys_[l].data() + pos * d;
        double* vl = values_[l].data() + pos * d;
        project(a, model.weight(MatrixType::wq, l), model.bias(MatrixType::wq, l), q);
        project(a, model.weight(MatrixType::wk, l), model.bias(MatrixType::wk, l), {kl, d});
        project(a, model.weight(MatrixType::wv, l), model.bias(MatrixType::wv, l), {vl, d});

        // Causal multi-head attention over positions 0..pos.
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j <= pos; ++j) {
                const double* kj = keys_[l].data() + j * d + off;
                double dot = 0.0;
                for (std::size_t i = 0; i < hd; ++i) {
                    dot += q[off + i] * kj[i];
                }
                scores[j] = dot * scale;
                best = std::max(best, scores[j]);
            }
            double total = 0.0;
            for (std::size_t j = 0; j <= pos; ++j) {
                scores[j] = std::exp(scores[j] - best);
                total += scores[j];
            }
            for (std::size_t j = 0; j <= pos; ++j) {
                scores[j] /= total;
            }
            for (std::size_t i = 0; i < hd; ++i) {
                z[off + i] = 0.0;
            }
            for (std::size_t j = 0; j <= pos; ++j) {
                const double* vj = values_[l].data() + j * d + off;
                const double p = scores[j];
                for (std::size_t i = 0; i < hd; ++i) {
                    z[off + i] += p * vj[i];
                }
            }
            if (capture_) {
                attention_[l][h].emplace_back(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(pos + 1));
            }
        }

        project(z, model.weight(MatrixType::wo, l), model.bias(MatrixType::wo, l), o);
        for (std::size_t i = 0; i < d; ++i) {
            u[i] = o[i] + x[i];
        }
        if (pre) {
            layer_norm(u, lw.ln2, c.layernorm_eps, m);
        } else {
            std::vector<double> r = u;
            layer_norm(r, lw.ln1, c.layernorm_eps, u);
            m = u;
        }
        project(m, model.weight(MatrixType::u_in, l), model.bias(MatrixType::u_in, l), hidden);
        for (double& hv : hidden) {
            hv = activate(c.activation, hv);
        }
        project(hidden, model.weight(MatrixType::u_out, l), model.bias(MatrixType::u_out, l), f);
        for (std::size_t i = 0; i < d; ++i) {
            y[i] = f[i] + u[i];
        }
        if (pre) {
            x = y;
        } else {
            layer_norm(y, lw.ln2, c.layernorm_eps, x);
        }
    }
    ++length_;

    if (out.empty()) {
        return;
    }
    if (pre) {
        layer_norm(x, base.final_ln, c.layernorm_eps, a);
    } else {
        a = x;
    }
    project(a, base.unembedding, base.unembedding_bias, out);
    log_softmax_inplace(out);
}

void log_softmax_inplace(std::span<double> row) {
    const double best = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) {
        total += std::exp(v - best);
    }
    const double lse = best + std::log(total);
    for (double& v : row) {
        v -= lse;
    }
}

TokenId argmax_token(std::span<const double> log_probs) {
    if (log_probs.empty()) {
        throw ArgumentError("argmax_token: empty distribution");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < log_probs.size(); ++i) {
        if (log_probs[i] > log_probs[best]) {
            best = i;
        }
    }
    return static_cast<TokenId>(best);
}

std::vector<TokenId> topk_from_log_probs(std::span<const double> log_probs, std::size_t k) {
    if (k < 1 || k > log_probs.size()) {
        throw ArgumentError("top-k: k = " + std::to_string(k) + " outside [1, " + std::to_string(log_probs.size()) +
                            "]");
    }
    std::vector<TokenId> ids(log_probs.size());
    std::iota(ids.begin(), ids.end(), TokenId{0});
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&](TokenId a, TokenId b) {
                          const double pa = log_probs[static_cast<std::size_t>(a)];
                          const double pb = log_probs[static_cast<std::size_t>(b)];
                          return pa != pb ? pa > pb : a < b;
                      });
    ids.resize(k);
    return ids;
}

Matrix forward(const TransformerModel& model, const TokenSequence& tokens) {
    if (tokens.empty()) {
        throw ArgumentError("forward: empty token sequence");
    }
    check_tokens(model, tokens);
    const std::size_t vocab = model.config().vocab_size;
    Matrix out(tokens.size(), vocab);
    InferenceSession session(model);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        session.feed(tokens[t], out.row(t));
    }
    return out;
}

ForwardTrace forward_traced(const TransformerModel& model, const TokenSequence& tokens) {
    if (tokens.empty()) {
        throw ArgumentError("forward: empty token sequence");
    }
    check_tokens(model, tokens);
    const auto& c = model.config();
    ForwardTrace trace{Matrix(tokens.size(), c.vocab_size), {}};
    InferenceSession session(model);
    session.capture_attention(true);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        session.feed(tokens[t], trace.log_probs.row(t));
    }
    const std::size_t T = tokens.size();
    trace.attention.resize(c.num_layers);
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        for (std::size_t h = 0; h < c.num_heads; ++h) {
            Matrix a(T, T);
            const auto& rows = session.attention_rows()[l][h];
            for (std::size_t i = 0; i < T; ++i) {
                for (std::size_t j = 0; j < rows[i].size(); ++j) {
                    a(i, j) = rows[i][j];
                }
            }
            trace.attention[l].push_back(std::move(a));
        }
    }
    return trace;
}

TokenSequence greedy_decode(const TransformerModel& model, const TokenSequence& prompt, std::size_t n_tokens) {
    if (prompt.empty()) {
        throw ArgumentError("greedy_decode: empty prompt");
    }
    check_tokens(model, prompt);
    if (prompt.size() + n_tokens > model.config().max_context) {
        throw ArgumentError("greedy_decode: prompt length " + std::to_string(prompt.size()) + " + " +
                            std::to_string(n_tokens) + " new tokens exceeds max_context " +
                            std::to_string(model.config().max_context));
    }
    TokenSequence out = prompt;
    if (n_tokens == 0) {
        return out;
    }
    InferenceSession session(model);
    std::vector<double> row(model.config().vocab_size);
    for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
        session.feed(prompt[i]);
    }
    session.feed(prompt.back(), row);
    for (std::size_t i = 0; i < n_tokens; ++i) {
        const TokenId next = argmax_token(row);
        out.push_back(next);
        if (i + 1 < n_tokens) {
            session.feed(next, row);
        }
    }
    return out;
}

double sequence_log_prob(const TransformerModel& model, const TokenSequence& context, const TokenSequence& target) {
    if (context.empty()) {
        throw ArgumentError("sequence_log_prob: empty context");
    }
    check_tokens(model, context);
    check_tokens(model, target);
    if (context.size() + target.size() > model.config().max_context + 1) {
        throw ArgumentError("sequence_log_prob: context + target exceeds max_context");
    }
    InferenceSession session(model);
    std::vector<double> row(model.config().vocab_size);
    for (std::size_t i = 0; i + 1 < context.size(); ++i) {
        session.feed(context[i]);
    }
    double total = 0.0;
    if (target.empty()) {
        return total;
    }
    session.feed(context.back(), row);
    for (std::size_t i = 0; i < target.size(); ++i) {
        total += row[static_cast<std::size_t>(target[i])];
        if (i + 1 < target.size()) {
            session.feed(target[i], row);
        }
    }
    return total;
}

double sequence_log_loss(const TransformerModel& model, const TokenSequence& context, const TokenSequence& target) {
    if (target.empty()) {
        throw ArgumentError("sequence_log_loss: empty target");
    }
    return -sequence_log_prob(model, context, target) / static_cast<double>(target.size());
}

std::vector<TokenId> topk_tokens(const TransformerModel& model, const TokenSequence& prompt, std::size_t k) {
    if (prompt.empty()) {
        throw ArgumentError("topk_tokens: empty prompt");
    }
    check_tokens(model, prompt);
    InferenceSession session(model);
    std::vector<double> row(model.config().vocab_size);
    for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
        session.feed(prompt[i]);
    }
    session.feed(prompt.back(), row);
    return topk_from_log_probs(row, k);
}

double sliding_window_perplexity(const TransformerModel& model, const TokenSequence& corpus, std::size_t stride) {
    if (stride < 1) {
        throw ArgumentError("sliding_window_perplexity: stride must be >= 1");
    }
    if (corpus.size() < 2) {
        throw ArgumentError("sliding_window_perplexity: corpus needs at least 2 tokens");
    }
    const std::size_t window = model.config().max_context;
    const std::size_t n = corpus.size();
    if (n > window && stride > window) {
        throw ArgumentError("sliding_window_perplexity: stride " + std::to_string(stride) +
                            " exceeds max_context and would skip tokens");
    }
    for (TokenId t : corpus) {
        if (t < 0 || static_cast<std::size_t>(t) >= model.config().vocab_size) {
            throw ArgumentError("token id " + std::to_string(t) + " outside vocabulary");
        }
    }

    std::vector<double> row(model.config().vocab_size);
    double nll = 0.0;
    std::size_t scored = 0;
    std::size_t prev_end = 0;
    for (std::size_t begin = 0;; begin += stride) {
        const std::size_t end = std::min(begin + window, n);
        // Positions [first, end) are scored; a window's first token has no context.
        const std::size_t first = std::max(prev_end, begin + 1);
        InferenceSession session(model);
        for (std::size_t p = begin; p + 1 < end; ++p) {
            if (p + 1 >= first) {
                session.feed(corpus[p], row);
                nll -= row[static_cast<std::size_t>(corpus[p + 1])];
                ++scored;
            } else {
                session.feed(corpus[p]);
            }
        }
        prev_end = end;
        if (end == n) {
            break;
        }
    }
    return std::exp(nll / static_cast<double>(scored));
}

} // namespace laser
