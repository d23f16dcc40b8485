#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flntk/dataset.hpp"
#include "flntk/matrix.hpp"
#include "flntk/model.hpp"

namespace flntk {

enum class record_level { loss_only, bounds, full_states };

std::string to_string(record_level level);

struct train_config {
    std::size_t clients = 1;      // N
    std::size_t local_steps = 1;  // K
    std::size_t rounds = 1;       // T
    double eta_local = 1e-3;
    double eta_global = 1.0;
    std::size_t width = 1024;     // m
    double sigma = 1.0;
    std::uint64_t seed = 0;
    record_level level = record_level::bounds;
    std::size_t threads = 1;      // >1 runs clients in parallel; results are identical

    void validate() const;
};

struct round_record {
    double residual_sq = 0.0;      // ||y - y(t)||^2 before the round's update
    double loss = 0.0;             // (1/N) sum_j L_j
    double max_global_move = 0.0;  // max_r ||u_r(t) - u_r(0)||
    double total_move_fro = 0.0;   // ||U(t) - U(0)||_F
};

struct local_record {
    std::size_t round = 0;
    std::size_t client = 0;
    std::size_t local_step = 0;        // k, 0..K; row k describes w_{k,c}(t)
    double local_residual = 0.0;       // ||y_c - y_c^(k)(t)||
    double local_deviation = 0.0;      // ||y_c(t) - y_c^(k)(t)||
    double max_move_from_init = 0.0;   // max_r ||w_{k,c,r}(t) - u_r(0)||
    double max_move_from_start = 0.0;  // max_r ||w_{k,c,r}(t) - u_r(t)||
};

struct train_trace {
    record_level level = record_level::bounds;
    std::size_t clients = 0;
    std::size_t local_steps = 0;
    std::size_t rounds = 0;
    double eta_local = 0.0;
    double eta_global = 0.0;
    std::size_t width = 0;

    std::vector<round_record> per_round;  // rounds + 1 entries, t = 0..T
    std::vector<local_record> per_local;  // level >= bounds; (t, c, k) with k = 0..K

    // full_states only:
    std::vector<dense_matrix> global_states;  // u(t), t = 0..T
    // local_states[t][c][k-1] = w_{k,c}(t) for k = 1..K (w_0 = u(t)).
    std::vector<std::vector<std::vector<dense_matrix>>> local_states;
    std::vector<double> signs;  // frozen a_r, needed to replay predictions

    const local_record* find_local(std::size_t t, std::size_t c, std::size_t k) const;
};

// Thrown when the residual exceeds 10^6 x its initial value or goes
// non-finite; carries whatever trace existed when training stopped.
class train_divergence_error : public std::runtime_error {
public:
    train_divergence_error(const std::string& what, train_trace partial)
        : std::runtime_error(what), partial_trace(std::move(partial)) {}
    train_trace partial_trace;
};

struct local_run_result {
    dense_matrix final_weights;        // w_{K,c}
    dense_matrix delta;                // w_{K,c} - u(t)
    std::vector<local_record> trace;   // rows k = 0..K (empty at loss_only level)
    std::vector<dense_matrix> states;  // w_{k,c} for k = 1..K (full_states only)
};

// K full-batch gradient steps on client c's loss, starting from the broadcast
// weights. `init_weights` feeds the movement-from-init column; pass nullptr to
// skip it (the column is then reported as movement from the start weights).
local_run_result local_run(const dense_matrix& start_weights, const std::vector<double>& signs,
                           const dataset& data, const std::vector<std::size_t>& client_points,
                           std::size_t local_steps, double eta_local,
                           record_level level = record_level::bounds,
                           const dense_matrix* init_weights = nullptr);

// Entrywise mean of the client deltas, accumulated in client order.
dense_matrix aggregate(const std::vector<dense_matrix>& deltas);

// u(t+1) = u(t) + eta_global * delta.
dense_matrix global_step(const dense_matrix& weights, const dense_matrix& delta, double eta_global);

// Run Algorithm 1 for config.rounds rounds and record the trajectory.
train_trace train(const train_config& config, const dataset& data, const client_partition& part);

struct rate_pair {
    double eta_local = 0.0;
    double eta_global = 0.0;
};

// NTK-analysis step-size prescription: eta_local = safety_c * lambda / (kappa K n^2),
// eta_global = 1.
rate_pair prescribed_rates(double lambda, double kappa, std::size_t n, std::size_t local_steps,
                           double safety_c);

// Trace CSV: one row per round. Optional per-(t,c,k) CSV via save_local_trace.
void save_trace(const train_trace& trace, const std::string& path);
void save_local_trace(const train_trace& trace, const std::string& path);

}  // namespace flntk
