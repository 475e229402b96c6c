#pragma once

// Slow, straightforward reference implementations used only by tests. None of
// them share code with the library beyond the data containers.

#include "laser/inference.hpp"
#include "laser/matrix.hpp"
#include "laser/model.hpp"
#include "laser/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <numbers>
#include <vector>

namespace oracle {

using laser::Matrix;

inline Matrix random_matrix(laser::SeededRng& rng, std::size_t m, std::size_t n) {
    Matrix a(m, n);
    for (auto& v : a.data()) {
        v = rng.normal();
    }
    return a;
}

// Triple-loop product.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                s += a(i, k) * b(k, j);
            }
            c(i, j) = s;
        }
    }
    return c;
}

// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations.
inline std::vector<double> symmetric_eigenvalues(Matrix a) {
    const std::size_t n = a.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                off += a(p, q) * a(p, q);
            }
        }
        if (off < 1e-30) {
            break;
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) {
        ev[i] = a(i, i);
    }
    std::sort(ev.begin(), ev.end(), std::greater<>());
    return ev;
}

// Singular values as square roots of the eigenvalues of the smaller Gram matrix.
inline std::vector<double> gram_singular_values(const Matrix& w) {
    const bool wide = w.rows() <= w.cols();
    const Matrix g = wide ? naive_matmul(w, w.transposed()) : naive_matmul(w.transposed(), w);
    auto ev = symmetric_eigenvalues(g);
    for (double& v : ev) {
        v = std::sqrt(std::max(0.0, v));
    }
    return ev;
}

// Largest singular value by power iteration on W^T W.
inline double power_spectral_norm(const Matrix& w, int iters = 500) {
    std::vector<double> x(w.cols(), 1.0);
    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        std::vector<double> y(w.rows(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            for (std::size_t j = 0; j < w.cols(); ++j) {
                y[i] += w(i, j) * x[j];
            }
        }
        std::vector<double> z(w.cols(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i) {
            for (std::size_t j = 0; j < w.cols(); ++j) {
                z[j] += w(i, j) * y[i];
            }
        }
        double norm = 0.0;
        for (double v : z) {
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            return 0.0;
        }
        for (std::size_t j = 0; j < z.size(); ++j) {
            x[j] = z[j] / norm;
        }
        sigma = std::sqrt(norm);
    }
    return sigma;
}

inline Matrix layer_norm_rows(const Matrix& x, const laser::LayerNormParams& p, double eps) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        double mean = 0.0;
        for (std::size_t i = 0; i < x.cols(); ++i) {
            mean += x(t, i);
        }
        mean /= static_cast<double>(x.cols());
        double var = 0.0;
        for (std::size_t i = 0; i < x.cols(); ++i) {
            var += (x(t, i) - mean) * (x(t, i) - mean);
        }
        var /= static_cast<double>(x.cols());
        for (std::size_t i = 0; i < x.cols(); ++i) {
            out(t, i) = (x(t, i) - mean) / std::sqrt(var + eps) * p.weight[i] + p.bias[i];
        }
    }
    return out;
}

inline Matrix affine(const Matrix& x, const Matrix& w, std::span<const double> b) {
    Matrix y = naive_matmul(x, w);
    if (!b.empty()) {
        for (std::size_t t = 0; t < y.rows(); ++t) {
            for (std::size_t j = 0; j < y.cols(); ++j) {
                y(t, j) += b[j];
            }
        }
    }
    return y;
}

// Whole-sequence forward pass written directly from the layer equations.
// Returns T x V next-token log-probabilities.
inline Matrix naive_forward(const laser::TransformerModel& model, const laser::TokenSequence& tokens) {
    using laser::MatrixType;
    const auto& c = model.config();
    const auto& base = model.baseline();
    const std::size_t T = tokens.size();
    const std::size_t d = c.hidden_dim;
    const std::size_t hd = d / c.num_heads;
    const bool pre = c.norm_kind == laser::NormKind::pre_layernorm;

    Matrix x(T, d);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            x(t, i) = base.embedding(static_cast<std::size_t>(tokens[t]), i) + base.position(t, i);
        }
    }
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const auto& lw = base.layers[l];
        const Matrix a = pre ? layer_norm_rows(x, lw.ln1, c.layernorm_eps) : x;
        const Matrix q = affine(a, model.weight(MatrixType::wq, l), model.bias(MatrixType::wq, l));
        const Matrix k = affine(a, model.weight(MatrixType::wk, l), model.bias(MatrixType::wk, l));
        const Matrix v = affine(a, model.weight(MatrixType::wv, l), model.bias(MatrixType::wv, l));
        Matrix z(T, d);
        for (std::size_t h = 0; h < c.num_heads; ++h) {
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<double> s(T, -std::numeric_limits<double>::infinity());
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j <= t; ++j) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < hd; ++i) {
                        dot += q(t, h * hd + i) * k(j, h * hd + i);
                    }
                    s[j] = dot / std::sqrt(static_cast<double>(hd));
                    mx = std::max(mx, s[j]);
                }
                double total = 0.0;
                for (std::size_t j = 0; j <= t; ++j) {
                    total += std::exp(s[j] - mx);
                }
                for (std::size_t j = 0; j <= t; ++j) {
                    const double p = std::exp(s[j] - mx) / total;
                    for (std::size_t i = 0; i < hd; ++i) {
                        z(t, h * hd + i) += p * v(j, h * hd + i);
                    }
                }
            }
        }
        Matrix u = affine(z, model.weight(MatrixType::wo, l), model.bias(MatrixType::wo, l));
        u += x;
        if (!pre) {
            u = layer_norm_rows(u, lw.ln1, c.layernorm_eps);
        }
        const Matrix m = pre ? layer_norm_rows(u, lw.ln2, c.layernorm_eps) : u;
        Matrix hid = affine(m, model.weight(MatrixType::u_in, l), model.bias(MatrixType::u_in, l));
        for (auto& val : hid.data()) {
            val = c.activation == laser::Activation::relu ? std::max(0.0, val)
                                                          : 0.5 * val * (1.0 + std::erf(val / std::numbers::sqrt2));
        }
        Matrix y = affine(hid, model.weight(MatrixType::u_out, l), model.bias(MatrixType::u_out, l));
        y += u;
        x = pre ? y : layer_norm_rows(y, lw.ln2, c.layernorm_eps);
    }
    const Matrix f = pre ? layer_norm_rows(x, base.final_ln, c.layernorm_eps) : x;
    Matrix logits = affine(f, base.unembedding, base.unembedding_bias);
    for (std::size_t t = 0; t < T; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            mx = std::max(mx, logits(t, j));
        }
        double total = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            total += std::exp(logits(t, j) - mx);
        }
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            logits(t, j) -= lse;
        }
    }
    return logits;
}

// Perplexity by enumerating, for every target position, the window that first
// covers it and recomputing that prefix from scratch.
inline double enumerated_perplexity(const laser::TransformerModel& model, const laser::TokenSequence& corpus,
                                    std::size_t stride) {
    const std::size_t T = model.config().max_context;
    const std::size_t n = corpus.size();
    double nll = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 1; p < n; ++p) {
        std::size_t begin = 0;
        while (std::min(begin + T, n) <= p) {
            begin += stride;
        }
        if (begin == p) {
            continue;
        }
        const laser::TokenSequence prefix(corpus.begin() + static_cast<std::ptrdiff_t>(begin),
                                          corpus.begin() + static_cast<std::ptrdiff_t>(p));
        const Matrix lp = naive_forward(model, prefix);
        nll -= lp(prefix.size() - 1, static_cast<std::size_t>(corpus[p]));
        ++count;
    }
    return std::exp(nll / static_cast<double>(count));
}

} // namespace oracle
