#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "flntk/dataset.hpp"
#include "flntk/model.hpp"

using namespace flntk;

namespace {

model_params tiny_params(std::vector<double> signs, dense_matrix weights) {
    model_params p;
    p.signs = std::move(signs);
    p.weights = std::move(weights);
    return p;
}

dataset small_data(std::uint64_t seed, std::size_t n, std::size_t d) {
    return generate(distribution_spec{}, n, d, rng_stream(seed, stream_ids::data));
}

// Central finite difference of client c's loss at weight entry (r, j).
double fd_loss_derivative(model_params params, const dataset& data,
                          const std::vector<std::size_t>& points, std::size_t r, std::size_t j,
                          double h) {
    auto loss_at = [&](double v) {
        params.weights(r, j) = v;
        double s = 0.0;
        for (std::size_t i : points) {
            double resid = forward(params, data.point(i)) - data.labels[i];
            s += 0.5 * resid * resid;
        }
        return s;
    };
    double w0 = params.weights(r, j);
    double up = loss_at(w0 + h), down = loss_at(w0 - h);
    return (up - down) / (2.0 * h);
}

}  // namespace

TEST_CASE("init determinism and sign balance") {
    model_params a = init(64, 5, 1.0, rng_stream(3, stream_ids::init));
    model_params b = init(64, 5, 1.0, rng_stream(3, stream_ids::init));
    CHECK(a.weights == b.weights);
    CHECK(a.signs == b.signs);

    model_params big = init(10000, 4, 1.0, rng_stream(4, stream_ids::init));
    double plus = 0.0;
    for (double s : big.signs) {
        CHECK((s == 1.0 || s == -1.0));
        if (s > 0) plus += 1.0;
    }
    CHECK(std::fabs(plus / 10000.0 - 0.5) <= 0.02);

    CHECK_THROWS_AS(init(0, 4, 1.0, rng_stream(0, 0)), parameter_error);
    CHECK_THROWS_AS(init(4, 4, 0.0, rng_stream(0, 0)), parameter_error);
}

TEST_CASE("initial predictions stay O(1) at sigma=1") {
    dataset data = small_data(1, 4, 6);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        model_params p = init(10000, 6, 1.0, rng_stream(seed, stream_ids::init));
        for (std::size_t i = 0; i < data.size(); ++i)
            CHECK(std::fabs(forward(p, data.point(i))) <= 10.0);
    }
}

TEST_CASE("forward single-neuron cases") {
    model_params active = tiny_params({1.0}, dense_matrix(1, 2, {1, 0}));
    std::vector<double> x{1, 0};
    CHECK(forward(active, x) == doctest::Approx(1.0));

    model_params inactive = tiny_params({1.0}, dense_matrix(1, 2, {-1, 0}));
    CHECK(forward(inactive, x) == 0.0);

    model_params cancel = tiny_params({1.0, -1.0}, dense_matrix(2, 2, {0.3, 0.4, 0.3, 0.4}));
    std::vector<double> x2{0.6, 0.8};
    CHECK(forward(cancel, x2) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("forward is positively homogeneous in the weights") {
    dataset data = small_data(2, 6, 4);
    model_params p = init(128, 4, 1.0, rng_stream(5, stream_ids::init));
    model_params scaled = p;
    for (std::size_t i = 0; i < scaled.weights.size(); ++i) scaled.weights.data()[i] *= 2.5;
    for (std::size_t i = 0; i < data.size(); ++i)
        CHECK(forward(scaled, data.point(i)) ==
              doctest::Approx(2.5 * forward(p, data.point(i))).epsilon(1e-12));
}

TEST_CASE("forward_all equals per-point forward bit-exactly") {
    dataset data = small_data(3, 8, 5);
    model_params p = init(333, 5, 1.0, rng_stream(6, stream_ids::init));
    prediction all = forward_all(p, data);
    for (std::size_t i = 0; i < data.size(); ++i)
        CHECK(all.values[i] == forward(p, data.point(i)));

    prediction empty = forward_all(p, data, {});
    CHECK(empty.values.empty());
    prediction subset = forward_all(p, data, {2, 5});
    CHECK(subset.values[0] == all.values[2]);
    CHECK(subset.values[1] == all.values[5]);
}

TEST_CASE("client_gradient closed-form single neuron, single point") {
    dataset data = small_data(4, 3, 3);
    dense_matrix w(1, 3, {0.5, 0.5, 0.5});
    model_params p = tiny_params({1.0}, w);
    std::vector<std::size_t> pts{0};
    double f = forward(p, data.point(0));
    dense_matrix g = client_gradient(p, data, pts);
    bool active = dot(p.weights.row(0), data.point(0)) >= 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        double expect = active ? (f - data.labels[0]) * data.inputs(0, j) : 0.0;
        CHECK(g(0, j) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("client_gradient vanishes at zero residual") {
    dataset data = small_data(5, 4, 3);
    model_params p = init(32, 3, 1.0, rng_stream(7, stream_ids::init));
    prediction pred = forward_all(p, data);
    dataset fitted = data;
    fitted.labels = pred.values;  // may leave [-1,1]; fine for gradient math
    for (double& y : fitted.labels) y = std::clamp(y, -1.0, 1.0);
    // use only points whose prediction is inside the clip range
    std::vector<std::size_t> pts;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (std::fabs(pred.values[i]) <= 1.0) pts.push_back(i);
    if (!pts.empty()) {
        dense_matrix g = client_gradient(p, fitted, pts);
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == 0.0);
    }
    CHECK_THROWS_AS(client_gradient(p, data, {}), parameter_error);

    if (pts.size() == data.size()) {
        client_partition part;
        part.assignments = {pts};
        loss_report rep = loss(p, fitted, part);
        CHECK(rep.per_client[0] == 0.0);
        CHECK(rep.total == 0.0);
        CHECK(rep.residual_sq == 0.0);
    }
}

TEST_CASE("client_gradient additivity over disjoint clients") {
    dataset data = small_data(8, 10, 4);
    model_params p = init(64, 4, 1.0, rng_stream(9, stream_ids::init));
    std::vector<std::size_t> all(10);
    for (std::size_t i = 0; i < 10; ++i) all[i] = i;
    dense_matrix g_all = client_gradient(p, data, all);
    dense_matrix g_a = client_gradient(p, data, {0, 1, 2, 3});
    dense_matrix g_b = client_gradient(p, data, {4, 5, 6, 7, 8, 9});
    for (std::size_t i = 0; i < g_all.size(); ++i)
        CHECK(g_all.data()[i] == doctest::Approx(g_a.data()[i] + g_b.data()[i]).epsilon(1e-12));
}

TEST_CASE("client_gradient matches finite differences away from kinks") {
    int accepted = 0;
    for (std::uint64_t seed = 0; accepted < 20 && seed < 200; ++seed) {
        dataset data = small_data(100 + seed, 5, 4);
        model_params p = init(24, 4, 1.0, rng_stream(200 + seed, stream_ids::init));
        std::vector<std::size_t> pts{0, 1, 2, 3, 4};
        bool near_kink = false;
        for (std::size_t r = 0; r < p.width() && !near_kink; ++r)
            for (std::size_t i : pts)
                if (std::fabs(dot(p.weights.row(r), data.point(i))) < 1e-4) near_kink = true;
        if (near_kink) continue;
        ++accepted;

        dense_matrix g = client_gradient(p, data, pts);
        double num = 0.0, den = 0.0;
        for (std::size_t r = 0; r < p.width(); ++r)
            for (std::size_t j = 0; j < p.dim(); ++j) {
                double fd = fd_loss_derivative(p, data, pts, r, j, 1e-6);
                num += (fd - g(r, j)) * (fd - g(r, j));
                den += g(r, j) * g(r, j);
            }
        CHECK(std::sqrt(num) <= 1e-5 * std::max(std::sqrt(den), 1e-12));
    }
    CHECK(accepted == 20);
}

TEST_CASE("loss arithmetic") {
    dataset data = small_data(12, 2, 3);
    model_params p = init(16, 3, 1.0, rng_stream(13, stream_ids::init));
    client_partition part;
    part.assignments = {{0}, {1}};

    loss_report rep = loss(p, data, part);
    prediction pred = forward_all(p, data);
    double r0 = pred.values[0] - data.labels[0], r1 = pred.values[1] - data.labels[1];
    CHECK(rep.per_client[0] == doctest::Approx(0.5 * r0 * r0));
    CHECK(rep.per_client[1] == doctest::Approx(0.5 * r1 * r1));
    CHECK(rep.total == doctest::Approx(0.5 * (rep.per_client[0] + rep.per_client[1])));
    CHECK(rep.residual_sq == doctest::Approx(r0 * r0 + r1 * r1));

    client_partition single;
    single.assignments = {{0, 1}};
    loss_report rep1 = loss(p, data, single);
    CHECK(rep1.total == doctest::Approx(rep1.per_client[0]));
    CHECK(rep1.total == doctest::Approx(0.5 * rep1.residual_sq));
}

TEST_CASE("params save/load round-trips exactly") {
    model_params p = init(37, 4, 0.5, rng_stream(15, stream_ids::init));
    std::string path = "model_test_params.csv";
    save(p, path);
    model_params loaded = load_params(path);
    CHECK(loaded.weights == p.weights);
    CHECK(loaded.signs == p.signs);
    CHECK(loaded.sigma == p.sigma);
    std::remove(path.c_str());
}
