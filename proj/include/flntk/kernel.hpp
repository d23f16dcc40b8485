#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flntk/dataset.hpp"
#include "flntk/matrix.hpp"
#include "flntk/model.hpp"

namespace flntk {

enum class gram_kind { infinite, empirical_symmetric, empirical_asymmetric, perp };

std::string to_string(gram_kind kind);

struct gram_matrix {
    dense_matrix matrix;  // n x n
    gram_kind kind = gram_kind::empirical_symmetric;

    std::size_t size() const { return matrix.rows(); }
};

// Packed n x m table of activation indicators 1{w_r^T x_i >= 0}; one row of
// bits per data point. Entry counts for Gram sums reduce to popcounts.
struct indicator_table {
    std::size_t points = 0;
    std::size_t width = 0;
    std::size_t words = 0;  // words per row
    std::vector<std::uint64_t> bits;

    bool get(std::size_t i, std::size_t r) const {
        return (bits[i * words + r / 64] >> (r % 64)) & 1u;
    }
    const std::uint64_t* row(std::size_t i) const { return bits.data() + i * words; }
};

indicator_table activation_signs(const dense_matrix& weights, const dataset& data);

// Neurons whose activation pattern on x_i is certified stable within radius R
// of the given weights: member(i, r) holds iff |w_r^T x_i| > R (strict).
struct pattern_sets {
    double radius = 0.0;
    std::size_t points = 0;
    std::size_t width = 0;
    std::size_t words = 0;
    std::vector<std::uint64_t> member;  // bit set = r in Q_i

    bool in_q(std::size_t i, std::size_t r) const {
        return (member[i * words + r / 64] >> (r % 64)) & 1u;
    }
    std::size_t complement_size(std::size_t i) const;
};

pattern_sets make_pattern_sets(const dense_matrix& init_weights, const dataset& data, double radius);

// Infinite-width kernel: entry (i,j) = x_i^T x_j (pi - arccos(x_i^T x_j)) / (2 pi),
// the closed form of E_w[x_i^T x_j 1{w^T x_i >= 0, w^T x_j >= 0}], w ~ N(0, I).
gram_matrix ntk_infinity(const dataset& data);

// Finite-width Gram with row indicators from `left` and column indicators
// from `right` (both m x d): (1/m) x_i^T x_j sum_r 1{l_r^T x_i >= 0} 1{r_r^T x_j >= 0}.
gram_matrix gram_pair(const dataset& data, const dense_matrix& left, const dense_matrix& right);

// Round Gram H(t,k): column j takes the local weights of the client owning j,
// rows take the global weights.
gram_matrix gram_round(const dataset& data, const client_partition& part,
                       const dense_matrix& global_weights,
                       const std::vector<dense_matrix>& local_weights);

// Same as gram_round with row sums restricted to the pattern complements Q_i-bar.
gram_matrix gram_perp(const dataset& data, const client_partition& part,
                      const dense_matrix& global_weights,
                      const std::vector<dense_matrix>& local_weights,
                      const pattern_sets& patterns);

struct spectrum_report {
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    double condition_number = 0.0;
};

spectrum_report spectrum(const gram_matrix& gram);

double gram_drift(const gram_matrix& g_t, const gram_matrix& g_0);

void save(const gram_matrix& gram, const std::string& path);

}  // namespace flntk
