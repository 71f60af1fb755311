#pragma once

// Minimal dense linear algebra over doubles: just enough for the effective
// dynamics, the network labs and their diagnostics. Matrices are small
// (a few hundred square at most), so robustness beats speed throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace condlab {

using Vector = std::vector<double>;

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

inline double dot(const Vector& u, const Vector& v) {
    if (u.size() != v.size())
        throw std::invalid_argument("dot: length mismatch " + std::to_string(u.size()) +
                                    " vs " + std::to_string(v.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

inline double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

inline Vector matvec(const Matrix& a, const Vector& v) {
    if (a.cols != v.size()) throw std::invalid_argument("matvec: shape mismatch");
    Vector out(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0.0;
        const double* row = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) s += row[j] * v[j];
        out[i] = s;
    }
    return out;
}

// A^T v without forming the transpose.
inline Vector matvec_transposed(const Matrix& a, const Vector& v) {
    if (a.rows != v.size()) throw std::invalid_argument("matvec_transposed: shape mismatch");
    Vector out(a.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) out[j] += row[j] * v[i];
    }
    return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: shape mismatch");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            double* orow = out.data.data() + i * out.cols;
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

inline Matrix outer(const Vector& u, const Vector& v) {
    Matrix out(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = u[i] * v[j];
    return out;
}

inline double frobenius(const Matrix& a) {
    double s = 0.0;
    for (double x : a.data) s += x * x;
    return std::sqrt(s);
}

inline Vector row(const Matrix& a, std::size_t i) {
    Vector out(a.cols);
    for (std::size_t j = 0; j < a.cols; ++j) out[j] = a(i, j);
    return out;
}

inline Vector column(const Matrix& a, std::size_t j) {
    Vector out(a.rows);
    for (std::size_t i = 0; i < a.rows; ++i) out[i] = a(i, j);
    return out;
}

struct EigenDecomposition {
    Vector eigenvalues;  // descending
    Matrix o;            // columns are eigenvectors, A = O diag(eigenvalues) O^T
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. The input must be
// square and symmetric to within `tol` (measured entrywise against the scale
// of A); eigenvalues come back sorted descending with matching columns of O.
inline EigenDecomposition symmetric_eigen(const Matrix& a_in, double tol) {
    if (a_in.rows != a_in.cols)
        throw std::invalid_argument("symmetric_eigen: matrix not square");
    const std::size_t n = a_in.rows;
    const double scale = std::max(1.0, frobenius(a_in));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a_in(i, j) - a_in(j, i)) > tol * scale)
                throw std::invalid_argument("symmetric_eigen: matrix asymmetric beyond tol");

    Matrix a = a_in;
    // symmetrize exactly so rotations keep both triangles consistent
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = m;
            a(j, i) = m;
        }
    Matrix o = Matrix::identity(n);

    auto off_norm = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };

    const double stop = 1e-15 * scale;
    for (int sweep = 0; sweep < 100 && off_norm() > stop; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = 0.5 * (a(q, q) - a(p, p)) / apq;
                double t = 1.0 / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                if (theta < 0.0) t = -t;
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double okp = o(k, p), okq = o(k, q);
                    o(k, p) = c * okp - s * okq;
                    o(k, q) = s * okp + c * okq;
                }
            }
        }
    }

    Vector ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return ev[i] > ev[j]; });

    EigenDecomposition out;
    out.eigenvalues.resize(n);
    out.o = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.eigenvalues[j] = ev[order[j]];
        for (std::size_t i = 0; i < n; ++i) out.o(i, j) = o(i, order[j]);
    }
    return out;
}

// Singular values as square roots of the eigenvalues of A^T A (or A A^T,
// whichever is smaller), clamped at zero, sorted descending.
inline Vector singular_values(const Matrix& a, double tol = 1e-12) {
    const bool use_ata = a.cols <= a.rows;
    const Matrix at = transpose(a);
    const Matrix gram = use_ata ? matmul(at, a) : matmul(a, at);
    EigenDecomposition ed = symmetric_eigen(gram, std::max(tol, 1e-9));
    Vector sv(ed.eigenvalues.size());
    for (std::size_t i = 0; i < sv.size(); ++i)
        sv[i] = std::sqrt(std::max(0.0, ed.eigenvalues[i]));
    return sv;
}

inline bool all_finite(const Vector& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const Matrix& m) { return all_finite(m.data); }

}  // namespace condlab
