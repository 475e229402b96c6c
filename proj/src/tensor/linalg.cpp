#include "laser/linalg.hpp"

#include "laser/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace laser {

namespace {

void require_rank_in_range(std::size_t r, std::size_t max_rank, const char* what) {
    if (r > max_rank) {
        throw ArgumentError(std::string(what) + ": rank " + std::to_string(r) + " exceeds min(rows, cols) = " +
                            std::to_string(max_rank));
    }
}

} // namespace

Matrix reconstruct(const SvdFactorization& f, std::size_t begin, std::size_t end) {
    const std::size_t m = f.u.rows();
    const std::size_t n = f.v.rows();
    Matrix out(m, n);
    end = std::min(end, f.sigma.size());
    for (std::size_t i = 0; i < m; ++i) {
        auto row = out.row(i);
        for (std::size_t c = begin; c < end; ++c) {
            const double a = f.u(i, c) * f.sigma[c];
            if (a == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                row[j] += a * f.v(j, c);
            }
        }
    }
    return out;
}

Matrix low_rank_approx(const SvdFactorization& f, std::size_t r) {
    require_rank_in_range(r, f.sigma.size(), "low_rank_approx");
    return reconstruct(f, 0, r);
}

Matrix low_rank_approx(const Matrix& w, std::size_t r) {
    require_rank_in_range(r, std::min(w.rows(), w.cols()), "low_rank_approx");
    if (r == 0) {
        return Matrix(w.rows(), w.cols());
    }
    return low_rank_approx(svd(w), r);
}

Matrix high_order_approx(const SvdFactorization& f, std::size_t r) {
    require_rank_in_range(r, f.sigma.size(), "high_order_approx");
    return reconstruct(f, r, f.sigma.size());
}

Matrix high_order_approx(const Matrix& w, std::size_t r) {
    require_rank_in_range(r, std::min(w.rows(), w.cols()), "high_order_approx");
    if (r == std::min(w.rows(), w.cols())) {
        return Matrix(w.rows(), w.cols());
    }
    return high_order_approx(svd(w), r);
}

std::size_t numerical_rank(const Matrix& w) {
    const std::vector<double> s = singular_values(w);
    if (s.empty() || s.front() == 0.0) {
        return 0;
    }
    const double cutoff = kRankTolerance * s.front();
    return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](double x) { return x >= cutoff; }));
}

double effective_rank(const Matrix& w) {
    const std::vector<double> s = singular_values(w);
    if (s.empty() || s.front() == 0.0) {
        throw ArgumentError("effective_rank: matrix is all zero");
    }
    const double cutoff = kRankTolerance * s.front();
    double total = 0.0;
    for (double x : s) {
        if (x >= cutoff) {
            total += x;
        }
    }
    double entropy = 0.0;
    for (double x : s) {
        if (x >= cutoff) {
            const double p = x / total;
            entropy -= p * std::log(p);
        }
    }
    return std::exp(entropy);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ArgumentError("cosine_similarity: length mismatch " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
    }
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw ArgumentError("cosine_similarity: zero-norm input");
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ArgumentError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                            std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        row_times(a.row(i), b, out.row(i));
    }
    return out;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) {
        throw ArgumentError("matvec: matrix has " + std::to_string(a.cols()) + " columns, vector has " +
                            std::to_string(x.size()) + " entries");
    }
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto row = a.row(i);
        double sum = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            sum += row[j] * x[j];
        }
        out[i] = sum;
    }
    return out;
}

void row_times(std::span<const double> x, const Matrix& a, std::span<double> out) {
    if (a.rows() != x.size() || a.cols() != out.size()) {
        throw ArgumentError("row_times: vector of " + std::to_string(x.size()) + " times " +
                            std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
    }
    std::fill(out.begin(), out.end(), 0.0);
    const std::size_t n = a.cols();
    double* o = out.data();
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double xk = x[k];
        if (xk == 0.0) {
            continue;
        }
        const double* r = a.row(k).data();
        for (std::size_t j = 0; j < n; ++j) {
            o[j] += xk * r[j];
        }
    }
}

double spectral_norm(const Matrix& w) { return singular_values(w).front(); }

} // namespace laser
