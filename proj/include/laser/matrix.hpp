#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace laser {

// Dense row-major matrix of doubles. Checkpoints are 32-bit, but every
// computation (SVD, forward pass, losses) runs in 64-bit.
class Matrix {
public:
    Matrix() = default;

    // Zero-filled rows x cols matrix.
    Matrix(std::size_t rows, std::size_t cols);

    // Takes ownership of row-major data; rejects size mismatches and non-finite entries.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);
    // Ones on the main diagonal of a rectangular matrix.
    static Matrix eye(std::size_t rows, std::size_t cols);
    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Matrix transposed() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scale);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix lhs, const Matrix& rhs);
Matrix operator-(Matrix lhs, const Matrix& rhs);
Matrix operator*(Matrix lhs, double scale);

double frobenius_norm(const Matrix& w);

// ||a - b||_F / ||b||_F, or the absolute norm when b is zero.
double relative_frobenius_error(const Matrix& a, const Matrix& b);

// Largest |a_ij - b_ij|.
double max_abs_diff(const Matrix& a, const Matrix& b);

} // namespace laser
