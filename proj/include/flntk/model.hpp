#pragma once

#include <string>
#include <vector>

#include "flntk/dataset.hpp"
#include "flntk/matrix.hpp"
#include "flntk/rng.hpp"

namespace flntk {

// Two-layer ReLU network f(u, x) = (1/sqrt(m)) sum_r a_r max(u_r^T x, 0).
// Only the first layer trains; the signs a_r are frozen at init.
//
// Weights are stored neuron-major: `weights` is m x d and row r holds u_r,
// so the hot per-neuron loops touch contiguous memory. File serialization
// uses the d-rows-of-m layout.
struct model_params {
    dense_matrix weights;       // m x d, row r = u_r
    std::vector<double> signs;  // m values in {-1, +1}
    double sigma = 1.0;

    std::size_t width() const { return weights.rows(); }
    std::size_t dim() const { return weights.cols(); }
};

struct prediction {
    std::vector<double> values;
};

model_params init(std::size_t m, std::size_t d, double sigma, const rng_stream& rng);

double forward(const model_params& params, std::span<const double> x);

// Predictions on all points, or on `indices` when given. Entry order follows
// the index order. Bit-identical to calling forward per point.
prediction forward_all(const model_params& params, const dataset& data);
prediction forward_all(const model_params& params, const dataset& data,
                       const std::vector<std::size_t>& indices);

// Gradient of client c's loss L_c at `params`: row r is
// (1/sqrt(m)) sum_{i in S_c} (f(u, x_i) - y_i) a_r x_i 1{u_r^T x_i >= 0}.
// The ReLU subgradient at exactly zero is 1 (the indicator is ">= 0").
dense_matrix client_gradient(const model_params& params, const dataset& data,
                             const std::vector<std::size_t>& client_points);

struct loss_report {
    std::vector<double> per_client;  // L_1 ... L_N
    double total = 0.0;              // (1/N) sum L_j
    double residual_sq = 0.0;        // ||y - y_hat||_2^2, the quantity the theory contracts
};

loss_report loss(const model_params& params, const dataset& data, const client_partition& part);

void save(const model_params& params, const std::string& path);
model_params load_params(const std::string& path);

}  // namespace flntk
