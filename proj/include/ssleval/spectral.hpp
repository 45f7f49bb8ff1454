#pragma once
#ifndef SSLEVAL_SPECTRAL_HPP
#define SSLEVAL_SPECTRAL_HPP

// Singular spectra of frame matrices.
//
// Two routes produce the same SingularSpectrum:
//  * dense_spectrum: one-sided (Hestenes) Jacobi SVD of the matrix itself.
//  * GramAccumulator + spectrum_from_gram: streams rows into C^T C and takes the
//    square roots of its eigenvalues (Householder tridiagonalization + implicit QL).
// The Gram route needs O(M^2) memory regardless of the number of rows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ssleval/error.hpp"
#include "ssleval/matrix.hpp"

namespace ssleval {

struct SingularSpectrum {
    std::vector<double> values;  // nonincreasing, >= 0, length min(rows, cols)
    std::size_t source_rows = 0;
    std::size_t source_cols = 0;
};

namespace detail {

inline void check_finite(std::span<const double> values, const char* what) {
    for (double v : values)
        if (!std::isfinite(v)) throw Error(ErrorKind::non_finite, std::string("non-finite entry in ") + what);
}

/// Orthogonalizes the rows of `w` in place by plane rotations; returns the row norms.
inline std::vector<double> hestenes_row_norms(Matrix& w) {
    const std::size_t n = w.rows();
    const std::size_t len = w.cols();
    constexpr double tol = 4.0 * std::numeric_limits<double>::epsilon();
    constexpr int max_sweeps = 80;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                auto a = w.row(p);
                auto b = w.row(q);
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t k = 0; k < len; ++k) {
                    alpha += a[k] * a[k];
                    beta += b[k] * b[k];
                    gamma += a[k] * b[k];
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::hypot(1.0, t);
                const double s = c * t;
                for (std::size_t k = 0; k < len; ++k) {
                    const double x = a[k];
                    const double y = b[k];
                    a[k] = c * x - s * y;
                    b[k] = s * x + c * y;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (double v : w.row(i)) acc += v * v;
        norms[i] = std::sqrt(acc);
    }
    return norms;
}

}  // namespace detail

/// Singular values of `matrix` (N x M), computed by one-sided Jacobi on the
/// min(N, M) rows or columns. High relative accuracy; cost O(min^2 * max) per sweep.
inline SingularSpectrum dense_spectrum(const Matrix& matrix) {
    if (matrix.rows() == 0 || matrix.cols() == 0)
        throw Error(ErrorKind::invalid_input, "dense_spectrum requires a nonempty matrix");
    detail::check_finite(matrix.values(), "matrix");
    Matrix work = matrix.rows() >= matrix.cols() ? matrix.transposed() : matrix;
    auto values = detail::hestenes_row_norms(work);
    std::sort(values.begin(), values.end(), std::greater<>());
    return {std::move(values), matrix.rows(), matrix.cols()};
}

/// Eigenvalues of a symmetric matrix (only the upper triangle is read), ascending.
///
/// Householder reduction to tridiagonal form followed by the implicit QL
/// algorithm with Wilkinson-style shifts. Absolute error is a small multiple of
/// machine epsilon times the matrix norm.
inline std::vector<double> symmetric_eigenvalues(const Matrix& sym) {
    const std::size_t n = sym.rows();
    if (n == 0 || sym.cols() != n) throw Error(ErrorKind::invalid_input, "symmetric_eigenvalues needs a square matrix");
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = sym(i, j);

    std::vector<double> d(n), e(n, 0.0);
    std::vector<double> v(n), p(n), w(n);
    for (std::size_t k = 0; k + 2 < n; ++k) {
        // reflector mapping a(k+1:n, k) onto a multiple of e_1
        const std::size_t m = n - k - 1;
        double sigma = 0.0;
        for (std::size_t i = 1; i < m; ++i) sigma += a(k + 1 + i, k) * a(k + 1 + i, k);
        const double x0 = a(k + 1, k);
        if (sigma == 0.0) {
            e[k] = x0;
            continue;
        }
        const double mu = std::sqrt(x0 * x0 + sigma);
        const double v0 = x0 <= 0.0 ? x0 - mu : -sigma / (x0 + mu);
        const double beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
        v[0] = 1.0;
        for (std::size_t i = 1; i < m; ++i) v[i] = a(k + 1 + i, k) / v0;

        // p = beta * A22 v ; w = p - (beta/2)(p.v) v ; A22 -= v w^T + w v^T
        double pv = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += a(k + 1 + i, k + 1 + j) * v[j];
            p[i] = beta * acc;
            pv += p[i] * v[i];
        }
        for (std::size_t i = 0; i < m; ++i) w[i] = p[i] - 0.5 * beta * pv * v[i];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) a(k + 1 + i, k + 1 + j) -= v[i] * w[j] + w[i] * v[j];
        e[k] = mu;
    }
    for (std::size_t i = 0; i < n; ++i) d[i] = a(i, i);
    if (n >= 2) e[n - 2] = a(n - 1, n - 2);
    e[n - 1] = 0.0;

    // implicit QL; e[i] couples d[i] and d[i+1]
    constexpr double eps = std::numeric_limits<double>::epsilon();
    // absolute floor so clusters of roundoff-sized eigenvalues (rank-deficient Gram) still deflate
    double tnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) tnorm = std::max(tnorm, std::abs(d[i]) + std::abs(e[i]));
    const double floor_e = eps * tnorm;
    for (std::size_t l = 0; l < n; ++l) {
        int iterations = 0;
        std::size_t m = l;
        do {
            for (m = l; m + 1 < n; ++m) {
                const double dd = std::abs(d[m]) + std::abs(d[m + 1]);
                if (std::abs(e[m]) <= eps * dd || std::abs(e[m]) <= floor_e) break;
            }
            if (m == l) break;
            if (++iterations > 64) throw Error(ErrorKind::math, "symmetric eigensolver did not converge");
            double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            double r = std::hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
            double s = 1.0, c = 1.0, shift = 0.0;
            bool underflow = false;
            for (std::size_t ii = m; ii-- > l;) {
                const double f = s * e[ii];
                const double b = c * e[ii];
                r = std::hypot(f, g);
                e[ii + 1] = r;
                if (r == 0.0) {
                    d[ii + 1] -= shift;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[ii + 1] - shift;
                r = (d[ii] - g) * s + 2.0 * c * b;
                shift = s * r;
                d[ii + 1] = g + shift;
                g = c * r - b;
            }
            if (underflow) continue;
            d[l] -= shift;
            e[l] = g;
            e[m] = 0.0;
        } while (m != l);
    }
    std::sort(d.begin(), d.end());
    return d;
}

/// Running C^T C over streamed rows. Only the upper triangle is updated; gram()
/// mirrors it, so the returned matrix is exactly symmetric.
class GramAccumulator {
public:
    explicit GramAccumulator(std::size_t dim) : dim_(dim), upper_(dim, dim) {
        if (dim == 0) throw Error(ErrorKind::invalid_input, "accumulator dim must be positive");
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t rows_seen() const noexcept { return rows_seen_; }

    /// Adds batch^T batch for a row-major batch of `values.size() / dim` rows.
    /// Products are formed and summed in binary64 whatever T is.
    template <typename T>
    void accumulate(std::span<const T> values) {
        if (values.size() % dim_ != 0)
            throw Error(ErrorKind::invalid_input, "batch size is not a multiple of accumulator dim " +
                                                      std::to_string(dim_));
        const std::size_t rows = values.size() / dim_;
        std::vector<double> x(dim_);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < dim_; ++j) x[j] = static_cast<double>(values[r * dim_ + j]);
            for (std::size_t i = 0; i < dim_; ++i) {
                const double xi = x[i];
                if (xi == 0.0) continue;
                auto g = upper_.row(i);
                for (std::size_t j = i; j < dim_; ++j) g[j] += xi * x[j];
            }
        }
        rows_seen_ += rows;
    }

    void accumulate(const Matrix& batch) {
        if (batch.rows() == 0) return;
        if (batch.cols() != dim_)
            throw Error(ErrorKind::invalid_input, "batch has " + std::to_string(batch.cols()) +
                                                      " columns, accumulator dim is " + std::to_string(dim_));
        accumulate(batch.values());
    }

    /// Adds another accumulator filled on a disjoint shard.
    void merge(const GramAccumulator& other) {
        if (other.dim_ != dim_) throw Error(ErrorKind::invalid_input, "cannot merge accumulators of different dim");
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = i; j < dim_; ++j) upper_(i, j) += other.upper_(i, j);
        rows_seen_ += other.rows_seen_;
    }

    Matrix gram() const {
        Matrix g(dim_, dim_);
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = i; j < dim_; ++j) g(i, j) = g(j, i) = upper_(i, j);
        return g;
    }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) t += upper_(i, i);
        return t;
    }

private:
    std::size_t dim_;
    Matrix upper_;
    std::size_t rows_seen_ = 0;
};

/// Relative PSD slack: eigenvalues in [-psd_tolerance * trace, 0) are roundoff and clamp to 0.
inline constexpr double psd_tolerance = 1e-9;

/// Singular values of a matrix C with Gram matrix `gram` = C^T C over `rows` rows:
/// sqrt of the eigenvalues, largest min(rows, dim) kept, nonincreasing.
inline SingularSpectrum spectrum_from_gram_matrix(const Matrix& gram, std::size_t rows) {
    if (rows == 0) throw Error(ErrorKind::precondition, "accumulator has seen no rows");
    double trace = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) trace += gram(i, i);
    auto eig = symmetric_eigenvalues(gram);
    const double floor = -psd_tolerance * trace;
    std::vector<double> values;
    values.reserve(eig.size());
    for (auto it = eig.rbegin(); it != eig.rend(); ++it) {
        if (*it < floor)
            throw Error(ErrorKind::math, "Gram matrix has eigenvalue " + std::to_string(*it) +
                                             " below the PSD tolerance; accumulation is corrupt");
        values.push_back(std::sqrt(std::max(*it, 0.0)));
    }
    values.resize(std::min(rows, gram.rows()));
    return {std::move(values), rows, gram.rows()};
}

inline SingularSpectrum spectrum_from_gram(const GramAccumulator& acc) {
    return spectrum_from_gram_matrix(acc.gram(), acc.rows_seen());
}

}  // namespace ssleval

#endif  // SSLEVAL_SPECTRAL_HPP
