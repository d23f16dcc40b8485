#include "flntk/theory.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "flntk/errors.hpp"
#include "flntk/linalg.hpp"

namespace flntk {

namespace {

constexpr double k_holds_slack = 1e-10;

std::vector<double> forward_values(const dense_matrix& weights, const std::vector<double>& signs,
                                   const dataset& data) {
    model_params p;
    p.weights = weights;
    p.signs = signs;
    prediction pred = forward_all(p, data);
    return pred.values;
}

void require_full_states(const train_trace& trace, const char* who) {
    if (trace.level != record_level::full_states || trace.global_states.empty())
        throw contract_error(std::string(who) + ": requires record_level full-states, trace has " +
                             to_string(trace.level));
}

void require_bounds(const train_trace& trace, const char* who) {
    if (trace.level == record_level::loss_only)
        throw contract_error(std::string(who) + ": requires record_level bounds or higher, trace has " +
                             to_string(trace.level));
}

}  // namespace

bound_report make_report(std::string name, double theoretical, double measured,
                         std::optional<std::size_t> round, std::optional<std::size_t> client,
                         std::optional<std::size_t> local_step) {
    bound_report rep;
    rep.name = std::move(name);
    rep.theoretical = theoretical;
    rep.measured = measured;
    rep.holds = measured <= theoretical + k_holds_slack;
    rep.margin = theoretical - measured;
    rep.round = round;
    rep.client = client;
    rep.local_step = local_step;
    return rep;
}

bool all_hold(const std::vector<bound_report>& reports) {
    for (const auto& r : reports)
        if (!r.holds) return false;
    return true;
}

contraction contraction_factor(double lambda, double eta_local, double eta_global,
                               std::size_t local_steps, std::size_t clients) {
    if (!(lambda > 0.0) || !(eta_local > 0.0) || !(eta_global > 0.0) || local_steps < 1 ||
        clients < 1)
        throw parameter_error("contraction_factor: all inputs must be positive");
    contraction c;
    c.factor = 1.0 - eta_global * eta_local * lambda * static_cast<double>(local_steps) /
                         (2.0 * static_cast<double>(clients));
    c.in_regime = c.factor > 0.0 && c.factor < 1.0;
    return c;
}

std::size_t rounds_to_eps(double factor, double eps) {
    if (!(factor > 0.0) || !(factor < 1.0))
        throw parameter_error("rounds_to_eps: factor must be in (0, 1)");
    if (!(eps > 0.0) || eps > 1.0) throw parameter_error("rounds_to_eps: eps must be in (0, 1]");
    if (eps == 1.0) return 0;
    double t = std::ceil(std::log(eps) / std::log(factor));
    auto rounds = static_cast<std::size_t>(std::max(t, 0.0));
    // log-ratio rounding can be off by one in either direction; repair exactly.
    while (rounds > 0 && std::pow(factor, static_cast<double>(rounds - 1)) <= eps) --rounds;
    while (std::pow(factor, static_cast<double>(rounds)) > eps) ++rounds;
    return rounds;
}

contraction_audit audit_contraction(const train_trace& trace, double factor) {
    if (trace.per_round.size() < 2)
        throw parameter_error("audit_contraction: trace needs at least 2 rounds");
    contraction_audit audit;
    std::size_t passing = 0, counted = 0;
    for (std::size_t t = 0; t + 1 < trace.per_round.size(); ++t) {
        double before = trace.per_round[t].residual_sq;
        double after = trace.per_round[t + 1].residual_sq;
        if (before == 0.0) {
            ++audit.exact_fit_rounds;
            continue;
        }
        bound_report rep = make_report("contraction-ratio", factor, after / before, t);
        passing += rep.holds ? 1 : 0;
        ++counted;
        audit.per_round.push_back(std::move(rep));
    }
    audit.pass_fraction =
        counted == 0 ? 1.0 : static_cast<double>(passing) / static_cast<double>(counted);
    return audit;
}

std::vector<bound_report> movement_bounds(const train_trace& trace, std::size_t n, std::size_t m,
                                          double lambda) {
    require_bounds(trace, "movement_bounds");
    if (!(lambda > 0.0)) throw parameter_error("movement_bounds: lambda must be positive");
    std::vector<bound_report> reports;
    const double sqrt_n = std::sqrt(static_cast<double>(n));
    const double sqrt_m = std::sqrt(static_cast<double>(m));
    const double res0 = std::sqrt(trace.per_round.at(0).residual_sq);
    const double d_bound = 8.0 * sqrt_n * res0 / (sqrt_m * lambda);

    for (std::size_t t = 0; t < trace.per_round.size(); ++t)
        reports.push_back(
            make_report("global-movement", d_bound, trace.per_round[t].max_global_move, t));

    for (const local_record& rec : trace.per_local) {
        const local_record* start = trace.find_local(rec.round, rec.client, 0);
        if (!start) throw contract_error("movement_bounds: missing k=0 row");
        double local_bound = 4.0 * sqrt_n * start->local_residual / (sqrt_m * lambda);
        reports.push_back(make_report("local-movement", local_bound, rec.max_move_from_start,
                                      rec.round, rec.client, rec.local_step));
    }
    return reports;
}

std::vector<bound_report> local_deviation_bounds(const train_trace& trace, double eta_local,
                                                 std::size_t n, std::size_t local_steps) {
    require_bounds(trace, "local_deviation_bounds");
    std::vector<bound_report> reports;
    const double scale = 2.0 * eta_local * static_cast<double>(n) * static_cast<double>(local_steps);
    for (const local_record& rec : trace.per_local) {
        if (rec.local_step == 0) continue;
        const local_record* start = trace.find_local(rec.round, rec.client, 0);
        if (!start) throw contract_error("local_deviation_bounds: missing k=0 row");
        reports.push_back(make_report("local-deviation", scale * start->local_residual,
                                      rec.local_deviation, rec.round, rec.client, rec.local_step));
    }
    return reports;
}

double measured_radius(const train_trace& trace, std::size_t through_round) {
    require_full_states(trace, "measured_radius");
    double r = 0.0;
    for (const round_record& rec : trace.per_round) r = std::max(r, rec.max_global_move);
    for (const local_record& rec : trace.per_local)
        if (rec.round <= through_round) r = std::max(r, rec.max_move_from_init);
    return r;
}

std::vector<bound_report> gram_drift_bounds(const train_trace& trace, const dataset& data,
                                            const client_partition& part) {
    require_full_states(trace, "gram_drift_bounds");
    const std::size_t n = data.size();
    const dense_matrix& u0 = trace.global_states.front();
    gram_matrix h0 = gram_pair(data, u0, u0);

    std::vector<bound_report> reports;
    double running_radius = 0.0;
    for (std::size_t t = 0; t < trace.local_states.size(); ++t) {
        const dense_matrix& u_t = trace.global_states[t];
        running_radius = std::max(running_radius, trace.per_round[t].max_global_move);
        for (std::size_t k = 0; k < trace.local_steps; ++k) {
            // Local states at step k; k = 0 is the broadcast weights.
            std::vector<dense_matrix> locals;
            locals.reserve(part.clients());
            for (std::size_t c = 0; c < part.clients(); ++c) {
                locals.push_back(k == 0 ? u_t : trace.local_states[t][c][k - 1]);
                const local_record* rec = trace.find_local(t, c, k);
                if (rec) running_radius = std::max(running_radius, rec->max_move_from_init);
            }
            gram_matrix h_tk = gram_round(data, part, u_t, locals);
            pattern_sets patterns = make_pattern_sets(u0, data, running_radius);
            gram_matrix h_perp = gram_perp(data, part, u_t, locals, patterns);

            double drift = gram_drift(h_tk, h0);
            double bound_drift = 2.0 * static_cast<double>(n) * running_radius;
            reports.push_back(make_report("gram-drift", bound_drift, drift, t, std::nullopt, k));
            double bound_perp = 4.0 * static_cast<double>(n) * running_radius;
            reports.push_back(make_report("gram-perp", bound_perp, h_perp.matrix.frobenius_norm(),
                                          t, std::nullopt, k));
        }
    }
    return reports;
}

round_decomposition decompose_round(const train_trace& trace, std::size_t round,
                                    const dataset& data, const client_partition& part,
                                    double pattern_radius) {
    require_full_states(trace, "decompose_round");
    if (round + 1 >= trace.global_states.size())
        throw parameter_error("decompose_round: round out of recorded range");
    if (!(pattern_radius > 0.0))
        throw parameter_error("decompose_round: pattern radius must be positive");

    const std::size_t n = data.size();
    const dense_matrix& u_t = trace.global_states[round];
    const dense_matrix& u_next = trace.global_states[round + 1];
    const std::vector<double>& signs = trace.signs;
    const std::size_t m = u_t.rows();

    std::vector<double> y_t = forward_values(u_t, signs, data);
    std::vector<double> y_next = forward_values(u_next, signs, data);

    round_decomposition out;
    {
        compensated_sum before, after;
        for (std::size_t i = 0; i < n; ++i) {
            double rb = data.labels[i] - y_t[i];
            double ra = data.labels[i] - y_next[i];
            before.add(rb * rb);
            after.add(ra * ra);
        }
        out.residual_sq_before = before.value();
        out.residual_sq_after = after.value();
    }

    pattern_sets patterns = make_pattern_sets(trace.global_states.front(), data, pattern_radius);

    // C1, C2: Gram-weighted cross terms over the K recorded local states.
    compensated_sum c1_acc, c2_acc;
    for (std::size_t k = 0; k < trace.local_steps; ++k) {
        std::vector<dense_matrix> locals;
        locals.reserve(part.clients());
        for (std::size_t c = 0; c < part.clients(); ++c)
            locals.push_back(k == 0 ? u_t : trace.local_states[round][c][k - 1]);

        std::vector<double> y_k(n, 0.0);
        for (std::size_t c = 0; c < part.clients(); ++c) {
            model_params p;
            p.weights = locals[c];
            p.signs = signs;
            prediction pred = forward_all(p, data, part.assignments[c]);
            for (std::size_t idx = 0; idx < part.assignments[c].size(); ++idx)
                y_k[part.assignments[c][idx]] = pred.values[idx];
        }

        gram_matrix h = gram_round(data, part, u_t, locals);
        gram_matrix h_perp = gram_perp(data, part, u_t, locals, patterns);
        for (std::size_t i = 0; i < n; ++i) {
            double ri = data.labels[i] - y_t[i];
            for (std::size_t j = 0; j < n; ++j) {
                double rj = data.labels[j] - y_k[j];
                c1_acc.add(ri * rj * h.matrix(i, j));
                c2_acc.add(ri * rj * h_perp.matrix(i, j));
            }
        }
    }
    const double rate = 2.0 * trace.eta_global * trace.eta_local / static_cast<double>(part.clients());
    out.c1 = -rate * c1_acc.value();
    out.c2 = rate * c2_acc.value();

    // C3 from v2 evaluated directly on the complement sets.
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    compensated_sum c3_acc;
    for (std::size_t i = 0; i < n; ++i) {
        auto x = data.point(i);
        compensated_sum v2;
        for (std::size_t r = 0; r < m; ++r) {
            if (patterns.in_q(i, r)) continue;
            double before = dot(u_t.row(r), x);
            double after = dot(u_next.row(r), x);
            double diff = std::max(after, 0.0) - std::max(before, 0.0);
            if (diff != 0.0) v2.add(signs[r] * diff);
        }
        c3_acc.add((data.labels[i] - y_t[i]) * (inv_sqrt_m * v2.value()));
    }
    out.c3 = -2.0 * c3_acc.value();

    compensated_sum c4_acc;
    for (std::size_t i = 0; i < n; ++i) {
        double d = y_next[i] - y_t[i];
        c4_acc.add(d * d);
    }
    out.c4 = c4_acc.value();

    double lhs = out.residual_sq_after;
    double rhs = out.residual_sq_before + out.c1 + out.c2 + out.c3 + out.c4;
    double scale = std::max({std::fabs(out.residual_sq_before), std::fabs(out.residual_sq_after),
                             std::fabs(out.c1), std::fabs(out.c2), std::fabs(out.c3),
                             std::fabs(out.c4), 1e-30});
    if (std::fabs(lhs - rhs) > 1e-8 * scale)
        throw contract_error("decompose_round: identity violated (" + std::to_string(lhs) +
                             " vs " + std::to_string(rhs) +
                             "); the pattern radius may not cover the round's movement");
    return out;
}

double rkhs_complexity(const gram_matrix& h_inf, const std::vector<double>& labels) {
    if (h_inf.size() != labels.size()) throw shape_error("rkhs_complexity: size mismatch");
    std::vector<double> x;
    try {
        x = solve_spd(h_inf.matrix, labels);
    } catch (const not_positive_definite_error& e) {
        throw degenerate_spectrum_error(std::string("rkhs_complexity: kernel is singular: ") +
                                        e.what());
    }
    compensated_sum acc;
    for (std::size_t i = 0; i < labels.size(); ++i) acc.add(labels[i] * x[i]);
    return acc.value();
}

generalization_report generalization_bound(const gram_matrix& h_inf,
                                           const std::vector<double>& labels, double delta,
                                           double slack_c) {
    if (!(delta > 0.0) || !(delta < 1.0))
        throw parameter_error("generalization_bound: delta must be in (0, 1)");
    const auto n = static_cast<double>(labels.size());
    spectrum_report spec = spectrum(h_inf);  // throws degenerate_spectrum_error when singular
    generalization_report rep;
    rep.complexity_term = std::sqrt(2.0 * rkhs_complexity(h_inf, labels) / n);
    rep.slack_term = slack_c * std::sqrt(std::log(n / (spec.lambda_min * delta)) / (2.0 * n));
    rep.total = rep.complexity_term + rep.slack_term;
    return rep;
}

bound_report movement_vs_rkhs(const train_trace& trace, const gram_matrix& h_inf,
                              const std::vector<double>& labels, double slack_factor) {
    double leading = std::sqrt(rkhs_complexity(h_inf, labels));
    double measured = trace.per_round.back().total_move_fro;
    return make_report("total-movement-vs-rkhs", (1.0 + slack_factor) * leading, measured);
}

void save_reports(const std::vector<bound_report>& reports, const std::string& path) {
    std::string out = "bound_name,round,client,local_step,theoretical,measured,holds,margin\n";
    char buf[32];
    for (const bound_report& r : reports) {
        out += r.name;
        out += ',';
        if (r.round) out += std::to_string(*r.round);
        out += ',';
        if (r.client) out += std::to_string(*r.client);
        out += ',';
        if (r.local_step) out += std::to_string(*r.local_step);
        std::snprintf(buf, sizeof buf, "%.17g", r.theoretical);
        out += ',';
        out += buf;
        std::snprintf(buf, sizeof buf, "%.17g", r.measured);
        out += ',';
        out += buf;
        out += r.holds ? ",1" : ",0";
        std::snprintf(buf, sizeof buf, "%.17g", r.margin);
        out += ',';
        out += buf;
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << out;
}

}  // namespace flntk
