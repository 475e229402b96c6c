#include "laser/error.hpp"
#include "laser/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

namespace laser {

namespace {

constexpr std::size_t kJacobiMaxDim = 32;
constexpr std::size_t kSweepsPerDim = 100;

// Column-major scratch matrix; every inner loop of both algorithms walks a column.
struct ColMajor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> d;

    ColMajor(std::size_t r, std::size_t c) : rows(r), cols(c), d(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return d[j * rows + i]; }
    double operator()(std::size_t i, std::size_t j) const { return d[j * rows + i]; }
    double* col(std::size_t j) { return d.data() + j * rows; }
    const double* col(std::size_t j) const { return d.data() + j * rows; }
};

// Column-major copy of w (transpose = false) or of w^T (transpose = true).
ColMajor to_col_major(const Matrix& w, bool transpose) {
    const std::size_t r = transpose ? w.cols() : w.rows();
    const std::size_t c = transpose ? w.rows() : w.cols();
    ColMajor out(r, c);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
            if (transpose) {
                out(j, i) = w(i, j);
            } else {
                out(i, j) = w(i, j);
            }
        }
    }
    return out;
}

// Factorization of a tall (rows >= cols) matrix: u is rows x cols, v is cols x cols.
struct TallSvd {
    ColMajor u;
    std::vector<double> s;
    ColMajor v;
};

[[noreturn]] void fail_to_converge(std::size_t m, std::size_t n, const char* method) {
    throw NumericalError(std::string("SVD (") + method + ") did not converge for " + std::to_string(m) + "x" +
                         std::to_string(n) + " matrix");
}

void rotate_columns(ColMajor& x, std::size_t a, std::size_t b, double cs, double sn) {
    double* ca = x.col(a);
    double* cb = x.col(b);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double t = cs * ca[i] + sn * cb[i];
        cb[i] = -sn * ca[i] + cs * cb[i];
        ca[i] = t;
    }
}

void swap_columns(ColMajor& x, std::size_t a, std::size_t b) {
    std::swap_ranges(x.col(a), x.col(a) + x.rows, x.col(b));
}

// Householder bidiagonalization followed by implicit-shift QR on the
// bidiagonal (Golub-Kahan-Reinsch). Requires a.rows >= a.cols.
TallSvd golub_kahan(ColMajor a, bool want_vectors, std::size_t orig_m, std::size_t orig_n) {
    const int m = static_cast<int>(a.rows);
    const int n = static_cast<int>(a.cols);
    const int nu = n;
    const bool wantu = want_vectors;
    const bool wantv = want_vectors;

    std::vector<double> s(static_cast<std::size_t>(n), 0.0);
    std::vector<double> e(static_cast<std::size_t>(n), 0.0);
    std::vector<double> work(static_cast<std::size_t>(m), 0.0);
    ColMajor U(wantu ? a.rows : 1, wantu ? a.cols : 1);
    ColMajor V(wantv ? a.cols : 1, wantv ? a.cols : 1);

    // Reduce a to bidiagonal form: diagonal in s, superdiagonal in e.
    const int nct = std::min(m - 1, n);
    const int nrt = std::max(0, std::min(n - 2, m));
    for (int k = 0; k < std::max(nct, nrt); ++k) {
        double* ak = a.col(k);
        if (k < nct) {
            s[k] = 0.0;
            for (int i = k; i < m; ++i) {
                s[k] = std::hypot(s[k], ak[i]);
            }
            if (s[k] != 0.0) {
                if (ak[k] < 0.0) {
                    s[k] = -s[k];
                }
                for (int i = k; i < m; ++i) {
                    ak[i] /= s[k];
                }
                ak[k] += 1.0;
            }
            s[k] = -s[k];
        }
        for (int j = k + 1; j < n; ++j) {
            double* aj = a.col(j);
            if (k < nct && s[k] != 0.0) {
                double t = 0.0;
                for (int i = k; i < m; ++i) {
                    t += ak[i] * aj[i];
                }
                t = -t / ak[k];
                for (int i = k; i < m; ++i) {
                    aj[i] += t * ak[i];
                }
            }
            e[j] = aj[k];
        }
        if (wantu && k < nct) {
            for (int i = k; i < m; ++i) {
                U(i, k) = ak[i];
            }
        }
        if (k < nrt) {
            e[k] = 0.0;
            for (int i = k + 1; i < n; ++i) {
                e[k] = std::hypot(e[k], e[i]);
            }
            if (e[k] != 0.0) {
                if (e[k + 1] < 0.0) {
                    e[k] = -e[k];
                }
                for (int i = k + 1; i < n; ++i) {
                    e[i] /= e[k];
                }
                e[k + 1] += 1.0;
            }
            e[k] = -e[k];
            if (k + 1 < m && e[k] != 0.0) {
                std::fill(work.begin() + k + 1, work.end(), 0.0);
                for (int j = k + 1; j < n; ++j) {
                    const double* aj = a.col(j);
                    for (int i = k + 1; i < m; ++i) {
                        work[i] += e[j] * aj[i];
                    }
                }
                for (int j = k + 1; j < n; ++j) {
                    const double t = -e[j] / e[k + 1];
                    double* aj = a.col(j);
                    for (int i = k + 1; i < m; ++i) {
                        aj[i] += t * work[i];
                    }
                }
            }
            if (wantv) {
                for (int i = k + 1; i < n; ++i) {
                    V(i, k) = e[i];
                }
            }
        }
    }

    int p = n;
    if (nct < n) {
        s[nct] = a(nct, nct);
    }
    if (m < p) {
        s[p - 1] = 0.0;
    }
    if (nrt + 1 < p) {
        e[nrt] = a(nrt, p - 1);
    }
    e[p - 1] = 0.0;

    if (wantu) {
        for (int j = nct; j < nu; ++j) {
            std::fill(U.col(j), U.col(j) + m, 0.0);
            U(j, j) = 1.0;
        }
        for (int k = nct - 1; k >= 0; --k) {
            double* uk = U.col(k);
            if (s[k] != 0.0) {
                for (int j = k + 1; j < nu; ++j) {
                    double* uj = U.col(j);
                    double t = 0.0;
                    for (int i = k; i < m; ++i) {
                        t += uk[i] * uj[i];
                    }
                    t = -t / uk[k];
                    for (int i = k; i < m; ++i) {
                        uj[i] += t * uk[i];
                    }
                }
                for (int i = k; i < m; ++i) {
                    uk[i] = -uk[i];
                }
                uk[k] = 1.0 + uk[k];
                for (int i = 0; i < k; ++i) {
                    uk[i] = 0.0;
                }
            } else {
                std::fill(uk, uk + m, 0.0);
                uk[k] = 1.0;
            }
        }
    }

    if (wantv) {
        for (int k = n - 1; k >= 0; --k) {
            double* vk = V.col(k);
            if (k < nrt && e[k] != 0.0) {
                for (int j = k + 1; j < nu; ++j) {
                    double* vj = V.col(j);
                    double t = 0.0;
                    for (int i = k + 1; i < n; ++i) {
                        t += vk[i] * vj[i];
                    }
                    t = -t / vk[k + 1];
                    for (int i = k + 1; i < n; ++i) {
                        vj[i] += t * vk[i];
                    }
                }
            }
            std::fill(vk, vk + n, 0.0);
            vk[k] = 1.0;
        }
    }

    // Implicit-shift QR iteration on the bidiagonal.
    const int pp = p - 1;
    const double eps = std::ldexp(1.0, -52);
    const double tiny = std::ldexp(1.0, -966);
    const std::size_t max_steps = kSweepsPerDim * std::min(orig_m, orig_n);
    std::size_t steps = 0;
    while (p > 0) {
        int k = 0;
        int kase = 0;

        // kase 1: s[p-1] negligible; kase 2: s[k] negligible; kase 3: e[k-1]
        // negligible, k < p-1 (QR step); kase 4: e[p-2] negligible (converged).
        for (k = p - 2; k >= -1; --k) {
            if (k == -1) {
                break;
            }
            if (std::abs(e[k]) <= tiny + eps * (std::abs(s[k]) + std::abs(s[k + 1]))) {
                e[k] = 0.0;
                break;
            }
        }
        if (k == p - 2) {
            kase = 4;
        } else {
            int ks = 0;
            for (ks = p - 1; ks >= k; --ks) {
                if (ks == k) {
                    break;
                }
                const double t = (ks != p ? std::abs(e[ks]) : 0.0) + (ks != k + 1 ? std::abs(e[ks - 1]) : 0.0);
                if (std::abs(s[ks]) <= tiny + eps * t) {
                    s[ks] = 0.0;
                    break;
                }
            }
            if (ks == k) {
                kase = 3;
            } else if (ks == p - 1) {
                kase = 1;
            } else {
                kase = 2;
                k = ks;
            }
        }
        ++k;

        switch (kase) {
        case 1: {
            double f = e[p - 2];
            e[p - 2] = 0.0;
            for (int j = p - 2; j >= k; --j) {
                const double t = std::hypot(s[j], f);
                const double cs = s[j] / t;
                const double sn = f / t;
                s[j] = t;
                if (j != k) {
                    f = -sn * e[j - 1];
                    e[j - 1] = cs * e[j - 1];
                }
                if (wantv) {
                    rotate_columns(V, j, p - 1, cs, sn);
                }
            }
        } break;

        case 2: {
            double f = e[k - 1];
            e[k - 1] = 0.0;
            for (int j = k; j < p; ++j) {
                const double t = std::hypot(s[j], f);
                const double cs = s[j] / t;
                const double sn = f / t;
                s[j] = t;
                f = -sn * e[j];
                e[j] = cs * e[j];
                if (wantu) {
                    rotate_columns(U, j, k - 1, cs, sn);
                }
            }
        } break;

        case 3: {
            if (++steps > max_steps) {
                fail_to_converge(orig_m, orig_n, "implicit QR");
            }
            const double scale = std::max({std::abs(s[p - 1]), std::abs(s[p - 2]), std::abs(e[p - 2]),
                                           std::abs(s[k]), std::abs(e[k])});
            const double sp = s[p - 1] / scale;
            const double spm1 = s[p - 2] / scale;
            const double epm1 = e[p - 2] / scale;
            const double sk = s[k] / scale;
            const double ek = e[k] / scale;
            const double b = ((spm1 + sp) * (spm1 - sp) + epm1 * epm1) / 2.0;
            const double c = (sp * epm1) * (sp * epm1);
            double shift = 0.0;
            if (b != 0.0 || c != 0.0) {
                shift = std::sqrt(b * b + c);
                if (b < 0.0) {
                    shift = -shift;
                }
                shift = c / (b + shift);
            }
            double f = (sk + sp) * (sk - sp) + shift;
            double g = sk * ek;

            // Chase the bulge.
            for (int j = k; j < p - 1; ++j) {
                double t = std::hypot(f, g);
                double cs = f / t;
                double sn = g / t;
                if (j != k) {
                    e[j - 1] = t;
                }
                f = cs * s[j] + sn * e[j];
                e[j] = cs * e[j] - sn * s[j];
                g = sn * s[j + 1];
                s[j + 1] = cs * s[j + 1];
                if (wantv) {
                    rotate_columns(V, j, j + 1, cs, sn);
                }
                t = std::hypot(f, g);
                cs = f / t;
                sn = g / t;
                s[j] = t;
                f = cs * e[j] + sn * s[j + 1];
                s[j + 1] = -sn * e[j] + cs * s[j + 1];
                g = sn * e[j + 1];
                e[j + 1] = cs * e[j + 1];
                if (wantu && j < m - 1) {
                    rotate_columns(U, j, j + 1, cs, sn);
                }
            }
            e[p - 2] = f;
        } break;

        case 4: {
            if (s[k] <= 0.0) {
                s[k] = (s[k] < 0.0 ? -s[k] : 0.0);
                if (wantv) {
                    double* vk = V.col(k);
                    for (int i = 0; i <= pp; ++i) {
                        vk[i] = -vk[i];
                    }
                }
            }
            while (k < pp) {
                if (s[k] >= s[k + 1]) {
                    break;
                }
                std::swap(s[k], s[k + 1]);
                if (wantv && k < n - 1) {
                    swap_columns(V, k, k + 1);
                }
                if (wantu && k < m - 1) {
                    swap_columns(U, k, k + 1);
                }
                ++k;
            }
            --p;
        } break;
        }
    }

    return TallSvd{std::move(U), std::move(s), std::move(V)};
}

// One-sided (Hestenes) Jacobi: orthogonalize column pairs of a until every
// pair is orthogonal to working precision. Requires a.rows >= a.cols.
TallSvd one_sided_jacobi(ColMajor a, bool want_vectors, std::size_t orig_m, std::size_t orig_n) {
    const std::size_t m = a.rows;
    const std::size_t n = a.cols;
    ColMajor V(want_vectors ? n : 1, want_vectors ? n : 1);
    if (want_vectors) {
        for (std::size_t i = 0; i < n; ++i) {
            V(i, i) = 1.0;
        }
    }

    const double tol = static_cast<double>(m) * std::ldexp(1.0, -52);
    const std::size_t max_sweeps = kSweepsPerDim * std::min(orig_m, orig_n);
    bool rotated = true;
    std::size_t sweeps = 0;
    while (rotated) {
        if (++sweeps > max_sweeps) {
            fail_to_converge(orig_m, orig_n, "one-sided Jacobi");
        }
        rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double* cp = a.col(p);
                const double* cq = a.col(q);
                double alpha = 0.0;
                double beta = 0.0;
                double gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += cp[i] * cp[i];
                    beta += cq[i] * cq[i];
                    gamma += cp[i] * cq[i];
                }
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                // [a_p, a_q] <- [c a_p - s a_q, s a_p + c a_q]
                rotate_columns(a, p, q, cs, -sn);
                if (want_vectors) {
                    rotate_columns(V, p, q, cs, -sn);
                }
            }
        }
    }

    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double* cj = a.col(j);
        double sum = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            sum += cj[i] * cj[i];
        }
        s[j] = std::sqrt(sum);
    }
    if (!want_vectors) {
        return TallSvd{ColMajor(1, 1), std::move(s), std::move(V)};
    }

    // Normalize columns into u; exactly-null columns are completed below.
    ColMajor U(m, n);
    std::vector<bool> valid(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        if (s[j] > 1e-290) {
            const double* cj = a.col(j);
            double* uj = U.col(j);
            for (std::size_t i = 0; i < m; ++i) {
                uj[i] = cj[i] / s[j];
            }
            valid[j] = true;
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (valid[j]) {
            continue;
        }
        // Pick the standard basis vector with the largest residual after
        // projecting out the valid columns (Gram-Schmidt applied twice).
        std::vector<double> best;
        double best_norm = -1.0;
        for (std::size_t cand = 0; cand < m; ++cand) {
            std::vector<double> x(m, 0.0);
            x[cand] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t c = 0; c < n; ++c) {
                    if (!valid[c]) {
                        continue;
                    }
                    const double* uc = U.col(c);
                    double dot = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                        dot += uc[i] * x[i];
                    }
                    for (std::size_t i = 0; i < m; ++i) {
                        x[i] -= dot * uc[i];
                    }
                }
            }
            double norm = 0.0;
            for (double xi : x) {
                norm += xi * xi;
            }
            norm = std::sqrt(norm);
            if (norm > best_norm + 1e-12) {
                best_norm = norm;
                best = std::move(x);
            }
        }
        double* uj = U.col(j);
        for (std::size_t i = 0; i < m; ++i) {
            uj[i] = best[i] / best_norm;
        }
        valid[j] = true;
    }
    return TallSvd{std::move(U), std::move(s), std::move(V)};
}

TallSvd factor_tall(ColMajor a, bool want_vectors, std::size_t orig_m, std::size_t orig_n) {
    if (a.cols <= kJacobiMaxDim) {
        return one_sided_jacobi(std::move(a), want_vectors, orig_m, orig_n);
    }
    return golub_kahan(std::move(a), want_vectors, orig_m, orig_n);
}

void require_valid(const Matrix& w) {
    if (w.rows() == 0 || w.cols() == 0) {
        throw ArgumentError("svd: matrix must be non-empty");
    }
    for (double x : w.data()) {
        if (!std::isfinite(x)) {
            throw ArgumentError("svd: matrix entries must be finite");
        }
    }
}

// Descending order; equal values keep their original relative order.
std::vector<std::size_t> descending_order(const std::vector<double>& s) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    return order;
}

} // namespace

SvdFactorization svd(const Matrix& w) {
    require_valid(w);
    const std::size_t m = w.rows();
    const std::size_t n = w.cols();
    const bool transpose = m < n;
    TallSvd tall = factor_tall(to_col_major(w, transpose), true, m, n);
    // For the transposed problem w^T = U S V^T, so w = V S U^T.
    const ColMajor& left = transpose ? tall.v : tall.u;
    const ColMajor& right = transpose ? tall.u : tall.v;

    const std::size_t k = std::min(m, n);
    const std::vector<std::size_t> order = descending_order(tall.s);
    SvdFactorization out{Matrix(m, k), std::vector<double>(k), Matrix(n, k)};
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t src = order[c];
        out.sigma[c] = tall.s[src];

        // Sign convention: largest-magnitude entry of u_c is positive (first on ties).
        const double* lu = left.col(src);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < m; ++i) {
            if (std::abs(lu[i]) > std::abs(lu[arg])) {
                arg = i;
            }
        }
        const double sign = lu[arg] < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < m; ++i) {
            out.u(i, c) = sign * lu[i] + 0.0;
        }
        const double* rv = right.col(src);
        for (std::size_t i = 0; i < n; ++i) {
            out.v(i, c) = sign * rv[i] + 0.0;
        }
    }
    return out;
}

std::vector<double> singular_values(const Matrix& w) {
    require_valid(w);
    const bool transpose = w.rows() < w.cols();
    TallSvd tall = factor_tall(to_col_major(w, transpose), false, w.rows(), w.cols());
    std::vector<double> s = std::move(tall.s);
    std::stable_sort(s.begin(), s.end(), std::greater<>());
    return s;
}

} // namespace laser
