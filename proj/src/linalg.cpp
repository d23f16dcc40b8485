#include "flntk/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace flntk {

namespace {

double offdiag_norm(const dense_matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
}

}  // namespace

eigh_result eigh_symmetric(const dense_matrix& input) {
    const std::size_t n = input.rows();
    if (n == 0 || input.cols() != n)
        throw shape_error("eigh_symmetric: matrix must be square and non-empty");
    if (input.relative_asymmetry() > 1e-12)
        throw shape_error("eigh_symmetric: matrix is asymmetric beyond tolerance");

    dense_matrix a = input;
    // Work on the exactly symmetrized matrix so rotations stay consistent.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }

    dense_matrix v(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

    const double scale = std::max(a.frobenius_norm(), 1e-300);
    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        if (offdiag_norm(a) <= 1e-15 * scale) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (std::fabs(apq) <= 1e-300) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });

    eigh_result out;
    out.eigenvalues.resize(n);
    out.eigenvectors = dense_matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        out.eigenvalues[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = v(i, order[k]);
    }
    return out;
}

std::vector<double> solve_spd(const dense_matrix& a, const std::vector<double>& b) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw shape_error("solve_spd: matrix must be square");
    if (b.size() != n) throw shape_error("solve_spd: rhs size mismatch");
    if (a.relative_asymmetry() > 1e-12)
        throw shape_error("solve_spd: matrix is asymmetric beyond tolerance");

    // Lower Cholesky factor, row by row.
    dense_matrix l(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0)
                    throw not_positive_definite_error(
                        "solve_spd: non-positive pivot at index " + std::to_string(i), i);
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }

    std::vector<double> y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

double spectral_norm(const dense_matrix& a) {
    if (a.empty()) throw shape_error("spectral_norm: empty matrix");
    const std::size_t rows = a.rows(), cols = a.cols();

    // B = A^T A, cols x cols.
    dense_matrix b(cols, cols, 0.0);
    for (std::size_t i = 0; i < cols; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < rows; ++k) s += a(k, i) * a(k, j);
            b(i, j) = s;
        }

    rng_stream start(0x7375ULL, 0xfeedULL);
    std::vector<double> x(cols);
    double xn = 0.0;
    for (std::size_t i = 0; i < cols; ++i) {
        x[i] = start.next_gaussian() + 1.0;  // biased away from exact orthogonality
        xn += x[i] * x[i];
    }
    xn = std::sqrt(xn);
    for (double& v : x) v /= xn;

    double lambda = 0.0;
    const int max_iters = 20000;
    std::vector<double> z(cols);
    for (int it = 0; it < max_iters; ++it) {
        for (std::size_t i = 0; i < cols; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += b(i, j) * x[j];
            z[i] = s;
        }
        double zn = 0.0, ray = 0.0;
        for (std::size_t i = 0; i < cols; ++i) {
            zn += z[i] * z[i];
            ray += x[i] * z[i];
        }
        zn = std::sqrt(zn);
        if (zn == 0.0) return 0.0;  // x landed in the null space of a zero/rank-0 B
        for (std::size_t i = 0; i < cols; ++i) x[i] = z[i] / zn;
        double prev = lambda;
        lambda = ray;
        if (it > 4 && std::fabs(lambda - prev) <= 1e-14 * std::fabs(lambda)) break;
    }
    return std::sqrt(std::max(lambda, 0.0));
}

dense_matrix gaussian_matrix(const rng_stream& rng, std::size_t rows, std::size_t cols,
                             double sigma) {
    if (sigma < 0.0) throw parameter_error("gaussian_matrix: sigma must be non-negative");
    dense_matrix out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            std::uint64_t idx = 2 * (i * cols + j);
            double u1 = (static_cast<double>(rng.at(idx) >> 11) + 1.0) * 0x1.0p-53;
            double u2 = static_cast<double>(rng.at(idx + 1) >> 11) * 0x1.0p-53;
            out(i, j) =
                sigma * std::sqrt(-2.0 * std::log(u1)) *
                std::cos(6.283185307179586476925287 * u2);
        }
    }
    return out;
}

}  // namespace flntk
