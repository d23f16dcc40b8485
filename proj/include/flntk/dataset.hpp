#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flntk/matrix.hpp"
#include "flntk/rng.hpp"

namespace flntk {

// n unit-norm points in R^d with scalar labels in [-1, 1].
struct dataset {
    dense_matrix inputs;        // n x d, row i = x_i, ||x_i|| = 1
    std::vector<double> labels; // n values

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.cols(); }
    std::span<const double> point(std::size_t i) const { return inputs.row(i); }

    // Unit norms within 1e-12, |y| <= 1, n >= 1, d >= 2.
    void validate() const;
};

// Disjoint cover of [n] by N non-empty client index sets.
struct client_partition {
    std::vector<std::vector<std::size_t>> assignments;

    std::size_t clients() const { return assignments.size(); }
    std::size_t total_points() const;
    void validate(std::size_t n) const;
};

enum class input_kind { uniform_sphere, two_cluster, custom_loaded };
enum class label_rule { linear_teacher, cluster_sign };

struct distribution_spec {
    input_kind kind = input_kind::uniform_sphere;
    label_rule labels = label_rule::linear_teacher;
};

// Sample a dataset; resamples any point whose |<x_i, x_j>| with an earlier
// point exceeds 1 - 1e-9 (parallel points make the limit kernel singular).
dataset generate(const distribution_spec& spec, std::size_t n, std::size_t d, rng_stream rng);

// Balanced random split: sizes differ by at most one.
client_partition partition_iid(std::size_t n, std::size_t num_clients, rng_stream rng);

// Dirichlet(alpha) label-skewed split over two sign classes. A repair pass
// moves points from the largest client so no client ends up empty.
client_partition partition_skewed(const std::vector<double>& labels, std::size_t num_clients,
                                  double alpha, rng_stream rng);

void save(const dataset& data, const std::string& path);
void save(const client_partition& part, const std::string& path);
dataset load_dataset(const std::string& path);
client_partition load_partition(const std::string& path);

}  // namespace flntk
