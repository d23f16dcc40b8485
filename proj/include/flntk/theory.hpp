#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flntk/dataset.hpp"
#include "flntk/kernel.hpp"
#include "flntk/trainer.hpp"

namespace flntk {

// One audited inequality: measured side vs. the closed-form theoretical side.
struct bound_report {
    std::string name;
    double theoretical = 0.0;
    double measured = 0.0;
    bool holds = false;  // measured <= theoretical + 1e-10
    double margin = 0.0; // theoretical - measured
    std::optional<std::size_t> round;
    std::optional<std::size_t> client;
    std::optional<std::size_t> local_step;
};

bound_report make_report(std::string name, double theoretical, double measured,
                         std::optional<std::size_t> round = std::nullopt,
                         std::optional<std::size_t> client = std::nullopt,
                         std::optional<std::size_t> local_step = std::nullopt);

bool all_hold(const std::vector<bound_report>& reports);

struct contraction {
    double factor = 0.0;
    bool in_regime = false;  // factor in (0, 1); outside, the rate statement is vacuous
};

// 1 - eta_global * eta_local * lambda * K / (2N).
contraction contraction_factor(double lambda, double eta_local, double eta_global,
                               std::size_t local_steps, std::size_t clients);

// Smallest T with factor^T <= eps.
std::size_t rounds_to_eps(double factor, double eps);

struct contraction_audit {
    std::vector<bound_report> per_round;
    double pass_fraction = 0.0;       // over rounds with a well-defined ratio
    std::size_t exact_fit_rounds = 0; // skipped: residual was already zero
};

contraction_audit audit_contraction(const train_trace& trace, double factor);

// Global movement per round vs D = 8 sqrt(n) ||y - y(0)|| / (sqrt(m) lambda),
// and per-(t,c,k) local movement vs 4 sqrt(n) ||y_c^(0)(t) - y_c|| / (sqrt(m) lambda).
std::vector<bound_report> movement_bounds(const train_trace& trace, std::size_t n, std::size_t m,
                                          double lambda);

// ||y_c(t) - y_c^(k)(t)|| vs 2 eta_local n K ||y_c(t) - y_c|| per (t,c,k).
std::vector<bound_report> local_deviation_bounds(const train_trace& trace, double eta_local,
                                                 std::size_t n, std::size_t local_steps);

// Per (t,k): ||H(t,k) - H(0)||_F vs 2 n R_meas and ||H(t,k) perp||_F vs 4 n R_meas,
// with R_meas the running max weight movement from init. Needs full_states.
std::vector<bound_report> gram_drift_bounds(const train_trace& trace, const dataset& data,
                                            const client_partition& part);

struct round_decomposition {
    double c1 = 0.0;  // main negative Gram term
    double c2 = 0.0;  // pattern-flip (perp) term
    double c3 = 0.0;  // v2 term
    double c4 = 0.0;  // second-order term ||y(t+1) - y(t)||^2
    double residual_sq_before = 0.0;
    double residual_sq_after = 0.0;
};

// Exact additive split of the change in squared residual across round t.
// Checks residual_sq_after = residual_sq_before + C1 + C2 + C3 + C4 to 1e-8
// relative and throws contract_error when violated (an implementation bug,
// not a theory failure). `pattern_radius` must dominate every weight movement
// in the round for the identity to be exact.
round_decomposition decompose_round(const train_trace& trace, std::size_t round,
                                    const dataset& data, const client_partition& part,
                                    double pattern_radius);

// Largest weight movement from init (global and local states) through round t
// inclusive; the measured stability radius R. Needs full_states.
double measured_radius(const train_trace& trace, std::size_t through_round);

// y^T (H_inf)^-1 y.
double rkhs_complexity(const gram_matrix& h_inf, const std::vector<double>& labels);

struct generalization_report {
    double complexity_term = 0.0;  // sqrt(2 y^T (H_inf)^-1 y / n)
    double slack_term = 0.0;       // slack_c * sqrt(log(n / (lambda_min delta)) / (2n))
    double total = 0.0;
};

generalization_report generalization_bound(const gram_matrix& h_inf,
                                           const std::vector<double>& labels, double delta,
                                           double slack_c = 1.0);

// Final ||U(T) - U(0)||_F vs (1 + slack_factor) sqrt(y^T (H_inf)^-1 y).
bound_report movement_vs_rkhs(const train_trace& trace, const gram_matrix& h_inf,
                              const std::vector<double>& labels, double slack_factor = 0.5);

void save_reports(const std::vector<bound_report>& reports, const std::string& path);

}  // namespace flntk
