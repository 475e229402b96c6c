#pragma once

#include "laser/matrix.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace laser {

// Thin SVD: w = u * diag(sigma) * v^T with k = min(m, n).
//
// Invariants guaranteed by svd():
//   * sigma is non-increasing and non-negative
//   * u (m x k) and v (n x k) have orthonormal columns
//   * the largest-magnitude entry of every u column is positive (the sign is
//     pushed into the matching v column), so the factorization is unique for
//     distinct singular values and byte-reproducible
struct SvdFactorization {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;
};

// Singular values below this fraction of sigma_1 count as zero when reporting rank.
inline constexpr double kRankTolerance = 1e-10;

// Golub-Kahan bidiagonalization + implicit-shift QR; one-sided Jacobi when
// min(m, n) <= 32. Throws NumericalError (naming the shape) if the QR/Jacobi
// iteration exceeds 100 * min(m, n) sweeps.
SvdFactorization svd(const Matrix& w);

// Singular values only (no singular vectors accumulated), descending.
std::vector<double> singular_values(const Matrix& w);

// sum_{i < end, i >= begin} sigma_i u_i v_i^T over the 0-based component range [begin, end).
Matrix reconstruct(const SvdFactorization& f, std::size_t begin, std::size_t end);

// Best rank-r approximation (top r components). r = 0 yields the zero matrix.
Matrix low_rank_approx(const Matrix& w, std::size_t r);
Matrix low_rank_approx(const SvdFactorization& f, std::size_t r);

// Everything but the top r components. low_rank_approx(w, r) + high_order_approx(w, r) == w.
Matrix high_order_approx(const Matrix& w, std::size_t r);
Matrix high_order_approx(const SvdFactorization& f, std::size_t r);

// Number of singular values >= kRankTolerance * sigma_1.
std::size_t numerical_rank(const Matrix& w);

// exp(entropy) of the normalized singular value distribution (Roy & Vetterli).
double effective_rank(const Matrix& w);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

Matrix matmul(const Matrix& a, const Matrix& b);

// a * x for a column vector x of length a.cols().
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

// x^T * a for a row vector x of length a.rows(); writes a.cols() values to out.
void row_times(std::span<const double> x, const Matrix& a, std::span<double> out);

double spectral_norm(const Matrix& w);

} // namespace laser
