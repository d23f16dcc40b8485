#include "flntk/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "flntk/errors.hpp"
#include "flntk/linalg.hpp"

namespace flntk {

namespace {

// Forward values of `weights` on the client's points; bit-identical to
// calling forward() per point.
std::vector<double> client_forward(const dense_matrix& weights, const std::vector<double>& signs,
                                   const dataset& data,
                                   const std::vector<std::size_t>& client_points) {
    const std::size_t m = weights.rows();
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    std::vector<double> out(client_points.size());
    for (std::size_t k = 0; k < client_points.size(); ++k) {
        auto x = data.point(client_points[k]);
        compensated_sum acc;
        for (std::size_t r = 0; r < m; ++r) {
            double pre = dot(weights.row(r), x);
            if (pre > 0.0) acc.add(signs[r] * pre);
        }
        out[k] = inv_sqrt_m * acc.value();
    }
    return out;
}

double max_row_distance(const dense_matrix& a, const dense_matrix& b) {
    double best = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double d = a(r, j) - b(r, j);
            s += d * d;
        }
        best = std::max(best, s);
    }
    return std::sqrt(best);
}

double frobenius_distance(const dense_matrix& a, const dense_matrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double norm_of_difference(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

std::string to_string(record_level level) {
    switch (level) {
        case record_level::loss_only: return "loss-only";
        case record_level::bounds: return "bounds";
        case record_level::full_states: return "full-states";
    }
    return "?";
}

void train_config::validate() const {
    if (clients < 1 || local_steps < 1 || width < 1)
        throw parameter_error("train_config: N, K, m must be >= 1");
    if (!(eta_local > 0.0) || !(eta_global > 0.0))
        throw parameter_error("train_config: step sizes must be positive");
    if (!(sigma > 0.0)) throw parameter_error("train_config: sigma must be positive");
    if (threads < 1) throw parameter_error("train_config: threads must be >= 1");
}

const local_record* train_trace::find_local(std::size_t t, std::size_t c, std::size_t k) const {
    // Rows are written in (t, c, k) order; direct indexing.
    std::size_t per_client = local_steps + 1;
    std::size_t idx = (t * clients + c) * per_client + k;
    if (idx >= per_local.size()) return nullptr;
    const local_record& rec = per_local[idx];
    if (rec.round != t || rec.client != c || rec.local_step != k) return nullptr;
    return &rec;
}

local_run_result local_run(const dense_matrix& start_weights, const std::vector<double>& signs,
                           const dataset& data, const std::vector<std::size_t>& client_points,
                           std::size_t local_steps, double eta_local, record_level level,
                           const dense_matrix* init_weights) {
    if (local_steps < 1) throw parameter_error("local_run: K must be >= 1");
    if (client_points.empty()) throw parameter_error("local_run: empty client set");
    if (signs.size() != start_weights.rows()) throw shape_error("local_run: signs/width mismatch");

    const std::size_t m = start_weights.rows(), d = start_weights.cols();
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    const dense_matrix& from_init = init_weights ? *init_weights : start_weights;

    std::vector<double> targets(client_points.size());
    for (std::size_t k = 0; k < client_points.size(); ++k)
        targets[k] = data.labels[client_points[k]];

    local_run_result out;
    out.final_weights = start_weights;
    dense_matrix& w = out.final_weights;

    std::vector<double> start_values;  // y_c(t), fixed at k = 0
    auto record_step = [&](std::size_t k, const std::vector<double>& values) {
        if (level == record_level::loss_only) return;
        local_record rec;
        rec.local_step = k;
        rec.local_residual = norm_of_difference(targets, values);
        rec.local_deviation = k == 0 ? 0.0 : norm_of_difference(start_values, values);
        rec.max_move_from_init = max_row_distance(w, from_init);
        rec.max_move_from_start = k == 0 ? 0.0 : max_row_distance(w, start_weights);
        out.trace.push_back(rec);
    };

    for (std::size_t k = 0; k < local_steps; ++k) {
        std::vector<double> values = client_forward(w, signs, data, client_points);
        for (double v : values)
            if (!std::isfinite(v))
                throw divergence_error("local_run: non-finite prediction", 0, 0, k);
        if (k == 0) start_values = values;
        record_step(k, values);

        // w_r += (eta_local / sqrt(m)) * a_r * sum_i (y_i - f_i) x_i 1{w_r^T x_i >= 0},
        // with every indicator evaluated at the step's starting weights.
        std::vector<char> active(client_points.size());
        for (std::size_t r = 0; r < m; ++r) {
            auto w_r = w.row(r);
            const double a_r = signs[r];
            for (std::size_t idx = 0; idx < client_points.size(); ++idx)
                active[idx] = dot(w_r, data.point(client_points[idx])) >= 0.0;
            for (std::size_t idx = 0; idx < client_points.size(); ++idx) {
                if (!active[idx]) continue;
                auto x = data.point(client_points[idx]);
                double coef = eta_local * inv_sqrt_m * a_r * (targets[idx] - values[idx]);
                for (std::size_t j = 0; j < d; ++j) w_r[j] += coef * x[j];
            }
        }
        if (level == record_level::full_states) out.states.push_back(w);
    }
    std::vector<double> final_values = client_forward(w, signs, data, client_points);
    for (double v : final_values)
        if (!std::isfinite(v))
            throw divergence_error("local_run: non-finite prediction", 0, 0, local_steps);
    record_step(local_steps, final_values);

    out.delta = dense_matrix(m, d);
    for (std::size_t i = 0; i < m * d; ++i)
        out.delta.data()[i] = w.data()[i] - start_weights.data()[i];
    return out;
}

dense_matrix aggregate(const std::vector<dense_matrix>& deltas) {
    if (deltas.empty()) throw parameter_error("aggregate: no deltas");
    const std::size_t rows = deltas[0].rows(), cols = deltas[0].cols();
    for (const auto& m : deltas)
        if (m.rows() != rows || m.cols() != cols) throw shape_error("aggregate: shape mismatch");
    dense_matrix out(rows, cols, 0.0);
    for (const auto& m : deltas)
        for (std::size_t i = 0; i < rows * cols; ++i) out.data()[i] += m.data()[i];
    const double inv_n = 1.0 / static_cast<double>(deltas.size());
    for (std::size_t i = 0; i < rows * cols; ++i) out.data()[i] *= inv_n;
    return out;
}

dense_matrix global_step(const dense_matrix& weights, const dense_matrix& delta,
                         double eta_global) {
    if (weights.rows() != delta.rows() || weights.cols() != delta.cols())
        throw shape_error("global_step: shape mismatch");
    dense_matrix out = weights;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += eta_global * delta.data()[i];
    return out;
}

train_trace train(const train_config& config, const dataset& data, const client_partition& part) {
    config.validate();
    part.validate(data.size());
    if (part.clients() != config.clients)
        throw parameter_error("train: partition has " + std::to_string(part.clients()) +
                              " clients, config says " + std::to_string(config.clients));

    model_params params = init(config.width, data.dim(), config.sigma,
                               rng_stream(config.seed, stream_ids::init));
    const dense_matrix init_weights = params.weights;

    train_trace trace;
    trace.level = config.level;
    trace.clients = config.clients;
    trace.local_steps = config.local_steps;
    trace.rounds = config.rounds;
    trace.eta_local = config.eta_local;
    trace.eta_global = config.eta_global;
    trace.width = config.width;
    if (config.level == record_level::full_states) trace.signs = params.signs;

    double initial_residual_sq = -1.0;

    auto record_round = [&](std::size_t t) {
        loss_report rep = loss(params, data, part);
        round_record rec;
        rec.residual_sq = rep.residual_sq;
        rec.loss = rep.total;
        rec.max_global_move = t == 0 ? 0.0 : max_row_distance(params.weights, init_weights);
        rec.total_move_fro = t == 0 ? 0.0 : frobenius_distance(params.weights, init_weights);
        trace.per_round.push_back(rec);
        if (initial_residual_sq < 0.0) initial_residual_sq = rep.residual_sq;
        if (!std::isfinite(rep.residual_sq) ||
            rep.residual_sq > 1e6 * std::max(initial_residual_sq, 1e-300))
            throw train_divergence_error(
                "train: residual diverged at round " + std::to_string(t), std::move(trace));
    };

    for (std::size_t t = 0; t < config.rounds; ++t) {
        record_round(t);
        if (config.level == record_level::full_states) trace.global_states.push_back(params.weights);

        std::vector<local_run_result> results(config.clients);
        auto run_client = [&](std::size_t c) {
            results[c] = local_run(params.weights, params.signs, data, part.assignments[c],
                                   config.local_steps, config.eta_local, config.level,
                                   &init_weights);
        };
        if (config.threads > 1 && config.clients > 1) {
            std::vector<std::thread> pool;
            std::size_t lanes = std::min(config.threads, config.clients);
            for (std::size_t lane = 0; lane < lanes; ++lane)
                pool.emplace_back([&, lane]() {
                    for (std::size_t c = lane; c < config.clients; c += lanes) run_client(c);
                });
            for (auto& th : pool) th.join();
        } else {
            for (std::size_t c = 0; c < config.clients; ++c) run_client(c);
        }

        std::vector<dense_matrix> deltas;
        deltas.reserve(config.clients);
        if (config.level == record_level::full_states)
            trace.local_states.emplace_back(config.clients);
        for (std::size_t c = 0; c < config.clients; ++c) {
            for (auto& rec : results[c].trace) {
                rec.round = t;
                rec.client = c;
                trace.per_local.push_back(rec);
            }
            deltas.push_back(std::move(results[c].delta));
        }
        if (config.level == record_level::full_states)
            for (std::size_t c = 0; c < config.clients; ++c)
                trace.local_states.back()[c] = std::move(results[c].states);

        dense_matrix delta = aggregate(deltas);
        params.weights = global_step(params.weights, delta, config.eta_global);
    }
    record_round(config.rounds);
    if (config.level == record_level::full_states) trace.global_states.push_back(params.weights);
    return trace;
}

rate_pair prescribed_rates(double lambda, double kappa, std::size_t n, std::size_t local_steps,
                           double safety_c) {
    if (!(lambda > 0.0)) throw parameter_error("prescribed_rates: lambda must be positive");
    if (!(kappa >= 1.0)) throw parameter_error("prescribed_rates: kappa must be >= 1");
    if (!(safety_c > 0.0) || safety_c > 1.0)
        throw parameter_error("prescribed_rates: safety_c must be in (0, 1]");
    if (n < 1 || local_steps < 1) throw parameter_error("prescribed_rates: n, K must be >= 1");
    rate_pair rates;
    rates.eta_local = safety_c * lambda /
                      (kappa * static_cast<double>(local_steps) * static_cast<double>(n * n));
    rates.eta_global = 1.0;
    return rates;
}

void save_trace(const train_trace& trace, const std::string& path) {
    std::string out = "round,residual_sq,loss,max_global_move,total_move_fro\n";
    char buf[32];
    for (std::size_t t = 0; t < trace.per_round.size(); ++t) {
        const round_record& r = trace.per_round[t];
        out += std::to_string(t);
        for (double v : {r.residual_sq, r.loss, r.max_global_move, r.total_move_fro}) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out += ',';
            out += buf;
        }
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << out;
}

void save_local_trace(const train_trace& trace, const std::string& path) {
    std::string out = "round,client,local_step,local_residual,local_deviation,max_local_move\n";
    char buf[32];
    for (const local_record& r : trace.per_local) {
        out += std::to_string(r.round) + ',' + std::to_string(r.client) + ',' +
               std::to_string(r.local_step);
        for (double v : {r.local_residual, r.local_deviation, r.max_move_from_init}) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out += ',';
            out += buf;
        }
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << out;
}

}  // namespace flntk
