#include "sncbf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sncbf {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw DimensionMismatch("Matrix: data length != rows*cols");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw DimensionMismatch("Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(const std::vector<double>& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Matrix Matrix::transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& o) {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("Matrix +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("Matrix -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw DimensionMismatch("Matrix product: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

std::vector<double> operator*(const Matrix& a, const std::vector<double>& x) {
    if (a.cols() != x.size()) throw DimensionMismatch("Matrix-vector product");
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) y[i] += a(i, j) * x[j];
    return y;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionMismatch("max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

CholeskyResult cholesky(const Matrix& A, double jitter) {
    if (!A.square()) throw DimensionMismatch("cholesky: matrix not square");
    const std::size_t n = A.rows();
    double scale = 0.0;
    for (double v : A.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(A(i, j) - A(j, i)) > 1e-9 * std::max(scale, 1.0))
                throw DimensionMismatch("cholesky: matrix not symmetric");

    CholeskyResult res;
    res.factor = Matrix(n, n);
    Matrix& L = res.factor;
    res.min_pivot = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        double d = A(j, j) + jitter;
        for (std::size_t k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
        res.min_pivot = std::min(res.min_pivot, d);
        if (!(d > 0.0)) {
            res.ok = false;
            res.failed_at = j;
            return res;
        }
        const double ljj = std::sqrt(d);
        L(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.5 * (A(i, j) + A(j, i));
            for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            L(i, j) = s / ljj;
        }
    }
    res.ok = true;
    res.failed_at = n;
    return res;
}

LogDetResult log_det_pd(const Matrix& A) {
    const CholeskyResult c = cholesky(A);
    LogDetResult r;
    r.ok = c.ok;
    r.min_pivot = c.min_pivot;
    if (!c.ok) return r;
    double s = 0.0;
    for (std::size_t i = 0; i < A.rows(); ++i) s += std::log(c.factor(i, i));
    r.value = 2.0 * s;
    return r;
}

Matrix cholesky_inverse(const Matrix& L) {
    const std::size_t n = L.rows();
    // Linv = L^{-1} (lower triangular), then A^{-1} = Linv^T Linv.
    Matrix Linv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        Linv(j, j) = 1.0 / L(j, j);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = j; k < i; ++k) s += L(i, k) * Linv(k, j);
            Linv(i, j) = -s / L(i, i);
        }
    }
    Matrix inv(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t k = i; k < n; ++k) s += Linv(k, i) * Linv(k, j);
            inv(i, j) = s;
            inv(j, i) = s;
        }
    return inv;
}

Matrix symmetric_block_assemble(const std::vector<std::vector<Matrix>>& blocks, bool require_symmetric) {
    const std::size_t br = blocks.size();
    if (br == 0) return Matrix();
    const std::size_t bc = blocks[0].size();
    std::vector<std::size_t> rh(br, 0), cw(bc, 0);
    for (std::size_t i = 0; i < br; ++i) {
        if (blocks[i].size() != bc) throw DimensionMismatch("block grid is ragged");
        for (std::size_t j = 0; j < bc; ++j) {
            const Matrix& b = blocks[i][j];
            if (b.rows() == 0 && b.cols() == 0) continue;
            if (rh[i] && rh[i] != b.rows()) throw DimensionMismatch("block row heights differ");
            if (cw[j] && cw[j] != b.cols()) throw DimensionMismatch("block column widths differ");
            rh[i] = b.rows();
            cw[j] = b.cols();
        }
    }
    std::size_t R = 0, C = 0;
    for (auto h : rh) R += h;
    for (auto w : cw) C += w;
    Matrix out(R, C);
    std::size_t r0 = 0;
    for (std::size_t i = 0; i < br; ++i) {
        std::size_t c0 = 0;
        for (std::size_t j = 0; j < bc; ++j) {
            const Matrix& b = blocks[i][j];
            if (b.rows() != 0 || b.cols() != 0)
                for (std::size_t a = 0; a < b.rows(); ++a)
                    for (std::size_t c = 0; c < b.cols(); ++c) out(r0 + a, c0 + c) = b(a, c);
            c0 += cw[j];
        }
        r0 += rh[i];
    }
    if (require_symmetric) {
        if (!out.square()) throw DimensionMismatch("assembled matrix not square");
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = i + 1; j < R; ++j)
                if (out(i, j) != out(j, i)) throw DimensionMismatch("assembled matrix not symmetric");
    }
    return out;
}

}  // namespace sncbf
