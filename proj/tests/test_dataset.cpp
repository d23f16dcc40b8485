#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "flntk/dataset.hpp"
#include "flntk/kernel.hpp"
#include "flntk/linalg.hpp"

using namespace flntk;

namespace {

std::string tmp_path(const char* name) {
    return std::string("dataset_test_") + name + ".csv";
}

}  // namespace

TEST_CASE("generate produces unit-norm inputs with clipped labels") {
    distribution_spec spec;
    dataset data = generate(spec, 4, 3, rng_stream(11, stream_ids::data));
    REQUIRE(data.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::fabs(norm2(data.point(i)) - 1.0) <= 1e-12);
    for (double y : data.labels) CHECK(std::fabs(y) <= 1.0);
}

TEST_CASE("generate is deterministic and rejects d < 2") {
    distribution_spec spec;
    dataset a = generate(spec, 12, 5, rng_stream(3, stream_ids::data));
    dataset b = generate(spec, 12, 5, rng_stream(3, stream_ids::data));
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK_THROWS_AS(generate(spec, 4, 1, rng_stream(3, 0)), parameter_error);
}

TEST_CASE("generated data is non-degenerate: lambda_min(H_inf) > 0") {
    distribution_spec spec;
    dataset data = generate(spec, 64, 8, rng_stream(17, stream_ids::data));
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = i + 1; j < data.size(); ++j)
            CHECK(std::fabs(dot(data.point(i), data.point(j))) < 1.0 - 1e-9);
    gram_matrix h = ntk_infinity(data);
    auto eig = eigh_symmetric(h.matrix);
    CHECK(eig.eigenvalues.front() > 0.0);
}

TEST_CASE("two-cluster data with cluster-sign labels") {
    distribution_spec spec;
    spec.kind = input_kind::two_cluster;
    spec.labels = label_rule::cluster_sign;
    dataset data = generate(spec, 10, 4, rng_stream(5, stream_ids::data));
    for (double y : data.labels) CHECK((y == 1.0 || y == -1.0));
    // cluster-sign labels make no sense on a single sphere
    distribution_spec bad;
    bad.labels = label_rule::cluster_sign;
    CHECK_THROWS_AS(generate(bad, 4, 3, rng_stream(1, 0)), parameter_error);
}

TEST_CASE("partition_iid balance") {
    auto p1 = partition_iid(10, 2, rng_stream(1, stream_ids::partition));
    CHECK(p1.assignments[0].size() == 5);
    CHECK(p1.assignments[1].size() == 5);

    auto p2 = partition_iid(10, 10, rng_stream(2, stream_ids::partition));
    for (const auto& s : p2.assignments) CHECK(s.size() == 1);

    auto p3 = partition_iid(7, 3, rng_stream(3, stream_ids::partition));
    std::multiset<std::size_t> sizes;
    for (const auto& s : p3.assignments) sizes.insert(s.size());
    CHECK(sizes == std::multiset<std::size_t>{2, 2, 3});

    CHECK_THROWS_AS(partition_iid(3, 5, rng_stream(0, 0)), parameter_error);
}

TEST_CASE("partitions cover [n] disjointly") {
    for (std::uint64_t seed : {1, 2, 3}) {
        auto p = partition_iid(23, 4, rng_stream(seed, stream_ids::partition));
        p.validate(23);  // throws on any violation
        CHECK(p.total_points() == 23);
    }
}

TEST_CASE("partition_skewed concentrates to uniform at huge alpha") {
    std::vector<double> labels(1000);
    rng_stream rng(9, stream_ids::data);
    for (auto& y : labels) y = rng.next_uniform() * 2.0 - 1.0;
    auto p = partition_skewed(labels, 4, 1e6, rng_stream(4, stream_ids::partition));
    p.validate(1000);
    for (const auto& s : p.assignments) {
        double frac = static_cast<double>(s.size()) / 1000.0;
        CHECK(std::fabs(frac - 0.25) < 0.05);
    }
}

TEST_CASE("partition_skewed repair pass keeps clients non-empty") {
    std::vector<double> labels(100, 0.5);  // single sign class
    auto p = partition_skewed(labels, 4, 0.1, rng_stream(6, stream_ids::partition));
    p.validate(100);
    for (const auto& s : p.assignments) CHECK(!s.empty());
    CHECK_THROWS_AS(partition_skewed(labels, 4, 0.0, rng_stream(0, 0)), parameter_error);
}

TEST_CASE("dataset save/load round-trips exactly") {
    distribution_spec spec;
    dataset data = generate(spec, 9, 4, rng_stream(21, stream_ids::data));
    std::string path = tmp_path("roundtrip");
    save(data, path);
    dataset loaded = load_dataset(path);
    CHECK(loaded.inputs == data.inputs);
    CHECK(loaded.labels == data.labels);
    std::remove(path.c_str());
}

TEST_CASE("partition save/load round-trips exactly") {
    auto part = partition_iid(17, 3, rng_stream(8, stream_ids::partition));
    std::string path = tmp_path("part");
    save(part, path);
    auto loaded = load_partition(path);
    CHECK(loaded.assignments == part.assignments);
    std::remove(path.c_str());
}

TEST_CASE("load rejects norm violations and truncated files") {
    std::string path = tmp_path("badnorm");
    {
        std::ofstream f(path);
        f << "# fl-ntk dataset v1, n=1, d=2\n0.5,0,0.1\n";
    }
    CHECK_THROWS_AS(load_dataset(path), validation_error);
    std::remove(path.c_str());

    std::string path2 = tmp_path("trunc");
    {
        std::ofstream f(path2);
        f << "# fl-ntk dataset v1, n=3, d=2\n1,0,0.1\n";
    }
    try {
        load_dataset(path2);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(e.line == 3);
    }
    std::remove(path2.c_str());
}
