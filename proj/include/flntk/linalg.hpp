#pragma once

#include <utility>
#include <vector>

#include "flntk/matrix.hpp"
#include "flntk/rng.hpp"

namespace flntk {

struct eigh_result {
    std::vector<double> eigenvalues;  // ascending
    dense_matrix eigenvectors;        // column k pairs with eigenvalues[k]
};

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Robust and adequate for the n <= a few hundred matrices used here.
// Throws shape_error if A is not square or asymmetric beyond 1e-12 relative.
eigh_result eigh_symmetric(const dense_matrix& a);

// Solve A x = b for symmetric positive-definite A (Cholesky).
// Throws not_positive_definite_error carrying the failing pivot index.
std::vector<double> solve_spd(const dense_matrix& a, const std::vector<double>& b);

// Largest singular value via power iteration on A^T A with a deterministic
// start vector and a fixed iteration cap; relative accuracy ~1e-6 or better.
double spectral_norm(const dense_matrix& a);

// rows x cols matrix of iid N(0, sigma^2) entries. Entry (i, j) is derived
// from draw index 2*(i*cols+j) of the stream, so the result depends only on
// (seed, stream_id, rows, cols, sigma) and never on evaluation order.
dense_matrix gaussian_matrix(const rng_stream& rng, std::size_t rows, std::size_t cols, double sigma);

}  // namespace flntk
