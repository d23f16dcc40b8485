#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flntk/kernel.hpp"
#include "flntk/linalg.hpp"
#include "flntk/theory.hpp"
#include "flntk/trainer.hpp"
#include "gd_oracle.hpp"

using namespace flntk;

namespace {

struct fixture {
    dataset data;
    client_partition part;
};

fixture make_fixture(std::size_t n, std::size_t d, std::size_t clients, std::uint64_t seed) {
    fixture f;
    f.data = generate(distribution_spec{}, n, d, rng_stream(seed, stream_ids::data));
    f.part = partition_iid(n, clients, rng_stream(seed, stream_ids::partition));
    return f;
}

}  // namespace

TEST_CASE("local_run stationary at zero residual") {
    // Small sigma keeps |f| < 1 so predictions are admissible labels.
    fixture f = make_fixture(6, 4, 1, 3);
    model_params p = init(64, 4, 0.05, rng_stream(4, stream_ids::init));
    prediction pred = forward_all(p, f.data);
    for (std::size_t i = 0; i < f.data.size(); ++i) f.data.labels[i] = pred.values[i];

    local_run_result r = local_run(p.weights, p.signs, f.data, f.part.assignments[0], 3, 0.01);
    for (std::size_t i = 0; i < r.delta.size(); ++i) CHECK(r.delta.data()[i] == 0.0);
    CHECK(r.trace.front().local_residual == 0.0);
}

TEST_CASE("local_run single step unrolls to the client gradient") {
    fixture f = make_fixture(8, 5, 2, 7);
    model_params p = init(96, 5, 1.0, rng_stream(8, stream_ids::init));
    const double eta = 1e-3;
    local_run_result r = local_run(p.weights, p.signs, f.data, f.part.assignments[0], 1, eta);
    dense_matrix g = client_gradient(p, f.data, f.part.assignments[0]);
    double scale = 0.0;
    for (std::size_t i = 0; i < p.weights.size(); ++i)
        scale = std::max(scale, std::fabs(p.weights.data()[i]));
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(r.delta.data()[i] == doctest::Approx(-eta * g.data()[i]).epsilon(1e-9)
                                       .scale(scale));

    CHECK_THROWS_AS(local_run(p.weights, p.signs, f.data, {}, 1, eta), parameter_error);
}

TEST_CASE("local steps contract the client residual at the theoretical rate") {
    fixture f = make_fixture(12, 6, 2, 11);
    const std::size_t m = 2048;
    model_params p = init(m, 6, 1.0, rng_stream(12, stream_ids::init));
    gram_matrix h0 = gram_pair(f.data, p.weights, p.weights);
    double lambda = spectrum(h0).lambda_min;

    const double eta = 1e-3;
    const std::size_t steps = 8;
    local_run_result r = local_run(p.weights, p.signs, f.data, f.part.assignments[0], steps, eta);
    double base = r.trace.front().local_residual;
    for (std::size_t k = 1; k <= steps; ++k) {
        double factor = std::pow(1.0 - eta * lambda / 2.0, static_cast<double>(k));
        CHECK(r.trace[k].local_residual * r.trace[k].local_residual <=
              factor * base * base + 1e-12);
    }
}

TEST_CASE("aggregate basics") {
    dense_matrix d1(2, 2, {1, 2, 3, 4});
    auto same = aggregate({d1});
    CHECK(same == d1);

    dense_matrix d2(2, 2, {-1, -2, -3, -4});
    auto zero = aggregate({d1, d2});
    for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero.data()[i] == 0.0);

    auto rep = aggregate({d1, d1, d1});
    for (std::size_t i = 0; i < rep.size(); ++i) CHECK(rep.data()[i] == d1.data()[i]);

    CHECK_THROWS_AS(aggregate({d1, dense_matrix(1, 2)}), shape_error);
}

TEST_CASE("global_step basics") {
    dense_matrix u(2, 2, {1, 1, 1, 1});
    dense_matrix zero(2, 2, 0.0);
    CHECK(global_step(u, zero, 1.0) == u);

    dense_matrix g(2, 2, {1, 2, 3, 4});
    auto moved = global_step(u, g, 2.0);
    CHECK(moved(0, 0) == doctest::Approx(3.0));
    CHECK(moved(1, 1) == doctest::Approx(9.0));
}

TEST_CASE("train with T=0 records only the initial round") {
    fixture f = make_fixture(6, 4, 2, 20);
    train_config cfg;
    cfg.clients = 2;
    cfg.local_steps = 2;
    cfg.rounds = 0;
    cfg.eta_local = 1e-3;
    cfg.width = 64;
    cfg.seed = 20;
    train_trace tr = train(cfg, f.data, f.part);
    CHECK(tr.per_round.size() == 1);
    CHECK(tr.per_round[0].max_global_move == 0.0);
}

TEST_CASE("FedAvg with N=1, K=1, eta_global=1 is plain gradient descent") {
    fixture f = make_fixture(8, 5, 1, 31);
    train_config cfg;
    cfg.clients = 1;
    cfg.local_steps = 1;
    cfg.rounds = 20;
    cfg.eta_local = 0.05;
    cfg.eta_global = 1.0;
    cfg.width = 256;
    cfg.seed = 31;
    train_trace tr = train(cfg, f.data, f.part);

    gd_oracle::state s;
    model_params p = init(cfg.width, 5, 1.0, rng_stream(cfg.seed, stream_ids::init));
    s.weights = p.weights;
    s.signs = p.signs;
    for (std::size_t t = 0; t <= cfg.rounds; ++t) {
        double oracle = gd_oracle::residual_sq(s, f.data);
        CHECK(std::fabs(tr.per_round[t].residual_sq - oracle) <=
              1e-12 * std::max(oracle, 1e-30));
        if (t < cfg.rounds) gd_oracle::gd_step(s, f.data, cfg.eta_local);
    }
}

TEST_CASE("training is deterministic and thread-count invariant") {
    fixture f = make_fixture(12, 5, 3, 41);
    train_config cfg;
    cfg.clients = 3;
    cfg.local_steps = 2;
    cfg.rounds = 10;
    cfg.eta_local = 0.02;
    cfg.width = 128;
    cfg.seed = 41;

    train_trace a = train(cfg, f.data, f.part);
    train_trace b = train(cfg, f.data, f.part);
    cfg.threads = 2;
    train_trace c = train(cfg, f.data, f.part);

    REQUIRE(a.per_round.size() == b.per_round.size());
    REQUIRE(a.per_round.size() == c.per_round.size());
    for (std::size_t t = 0; t < a.per_round.size(); ++t) {
        CHECK(a.per_round[t].residual_sq == b.per_round[t].residual_sq);
        CHECK(a.per_round[t].residual_sq == c.per_round[t].residual_sq);
        CHECK(a.per_round[t].total_move_fro == c.per_round[t].total_move_fro);
    }
    for (std::size_t i = 0; i < a.per_local.size(); ++i) {
        CHECK(a.per_local[i].local_residual == c.per_local[i].local_residual);
        CHECK(a.per_local[i].local_deviation == c.per_local[i].local_deviation);
    }
}

TEST_CASE("permuting clients leaves the aggregate and trajectory unchanged") {
    fixture f = make_fixture(12, 5, 3, 51);
    train_config cfg;
    cfg.clients = 3;
    cfg.local_steps = 2;
    cfg.rounds = 8;
    cfg.eta_local = 0.02;
    cfg.width = 128;
    cfg.seed = 51;
    train_trace a = train(cfg, f.data, f.part);

    client_partition permuted;
    permuted.assignments = {f.part.assignments[2], f.part.assignments[0],
                            f.part.assignments[1]};
    train_trace b = train(cfg, f.data, permuted);

    for (std::size_t t = 0; t < a.per_round.size(); ++t) {
        double ra = a.per_round[t].residual_sq, rb = b.per_round[t].residual_sq;
        CHECK(std::fabs(ra - rb) <= 1e-10 * std::max({ra, rb, 1e-30}));
    }

    // one-round aggregate, fixed weights
    model_params p = init(cfg.width, 5, 1.0, rng_stream(cfg.seed, stream_ids::init));
    std::vector<dense_matrix> deltas, deltas_perm;
    for (std::size_t c = 0; c < 3; ++c)
        deltas.push_back(local_run(p.weights, p.signs, f.data, f.part.assignments[c], 2, 0.02)
                             .delta);
    for (std::size_t c = 0; c < 3; ++c)
        deltas_perm.push_back(
            local_run(p.weights, p.signs, f.data, permuted.assignments[c], 2, 0.02).delta);
    dense_matrix agg = aggregate(deltas), agg_perm = aggregate(deltas_perm);
    for (std::size_t i = 0; i < agg.size(); ++i)
        CHECK(std::fabs(agg.data()[i] - agg_perm.data()[i]) <= 1e-14);
}

TEST_CASE("divergence raises with a partial trace") {
    fixture f = make_fixture(8, 4, 2, 61);
    train_config cfg;
    cfg.clients = 2;
    cfg.local_steps = 3;
    cfg.rounds = 400;
    cfg.eta_local = 50.0;  // far beyond any stable step size
    cfg.width = 64;
    cfg.seed = 61;
    try {
        train(cfg, f.data, f.part);
        FAIL("expected train_divergence_error");
    } catch (const train_divergence_error& e) {
        CHECK(!e.partial_trace.per_round.empty());
    }
}

TEST_CASE("prescribed_rates formula") {
    rate_pair r = prescribed_rates(0.5, 2.0, 10, 5, 1.0);
    CHECK(r.eta_local == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(r.eta_global == 1.0);

    rate_pair half = prescribed_rates(0.5, 2.0, 10, 5, 0.5);
    CHECK(half.eta_local == doctest::Approx(0.5 * r.eta_local).epsilon(1e-12));

    CHECK_THROWS_AS(prescribed_rates(0.0, 2.0, 10, 5, 1.0), parameter_error);
    CHECK_THROWS_AS(prescribed_rates(0.5, 2.0, 10, 5, 0.0), parameter_error);
}

TEST_CASE("short prescribed-rate run contracts round over round") {
    // Spot check of the per-round inequality on a feasible prefix: the full
    // rounds_to_eps horizon at these rates is far beyond desk scale.
    fixture f = make_fixture(8, 6, 2, 71);
    model_params probe = init(1024, 6, 1.0, rng_stream(71, stream_ids::init));
    gram_matrix h0 = gram_pair(f.data, probe.weights, probe.weights);
    spectrum_report spec = spectrum(h0);
    rate_pair rates = prescribed_rates(spec.lambda_min, spec.condition_number, 8, 2, 1.0);

    train_config cfg;
    cfg.clients = 2;
    cfg.local_steps = 2;
    cfg.rounds = 60;
    cfg.eta_local = rates.eta_local;
    cfg.eta_global = rates.eta_global;
    cfg.width = 1024;
    cfg.seed = 71;
    train_trace tr = train(cfg, f.data, f.part);

    contraction c = contraction_factor(spec.lambda_min, rates.eta_local, rates.eta_global, 2, 2);
    REQUIRE(c.in_regime);
    contraction_audit audit = audit_contraction(tr, c.factor);
    CHECK(audit.pass_fraction >= 0.9);
}
