#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sncbf {

class DimensionMismatch : public std::invalid_argument {
public:
    explicit DimensionMismatch(const std::string& what) : std::invalid_argument(what) {}
};

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(const std::vector<double>& d);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool square() const { return rows_ == cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    Matrix transpose() const;
    bool all_finite() const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s);

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
std::vector<double> operator*(const Matrix& a, const std::vector<double>& x);

double max_abs_diff(const Matrix& a, const Matrix& b);

struct CholeskyResult {
    bool ok = false;
    Matrix factor;            // lower triangular, valid when ok
    double min_pivot = 0.0;   // smallest squared pivot encountered (the failing one when !ok)
    std::size_t failed_at = 0;
};

// Factor A + jitter*I = L L^T. A is symmetrized as (A + A^T)/2 first.
// Throws DimensionMismatch for non-square input or asymmetry beyond 1e-9 relative.
CholeskyResult cholesky(const Matrix& A, double jitter = 0.0);

struct LogDetResult {
    bool ok = false;
    double value = 0.0;
    double min_pivot = 0.0;
};

LogDetResult log_det_pd(const Matrix& A);

// Inverse of A from its Cholesky factor L.
Matrix cholesky_inverse(const Matrix& L);

// Concatenate a grid of blocks. Empty (0x0) blocks are treated as zero blocks
// whose shape is inferred from the row/column neighbours.
Matrix symmetric_block_assemble(const std::vector<std::vector<Matrix>>& blocks,
                                bool require_symmetric = false);

}  // namespace sncbf
