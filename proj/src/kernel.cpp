#include "flntk/kernel.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "flntk/errors.hpp"
#include "flntk/linalg.hpp"

namespace flntk {

namespace {

constexpr double k_pi = 3.14159265358979323846;

double inner_product_table_entry(const dataset& data, std::size_t i, std::size_t j) {
    return dot(data.point(i), data.point(j));
}

std::size_t and_popcount(const std::uint64_t* a, const std::uint64_t* b, std::size_t words) {
    std::size_t c = 0;
    for (std::size_t w = 0; w < words; ++w) c += std::popcount(a[w] & b[w]);
    return c;
}

std::size_t and3_popcount(const std::uint64_t* a, const std::uint64_t* b, const std::uint64_t* c,
                          std::size_t words) {
    std::size_t n = 0;
    for (std::size_t w = 0; w < words; ++w) n += std::popcount(a[w] & b[w] & c[w]);
    return n;
}

void check_unit_norms(const dataset& data) {
    for (std::size_t i = 0; i < data.size(); ++i)
        if (std::fabs(norm2(data.point(i)) - 1.0) > 1e-9)
            throw validation_error("kernel: input " + std::to_string(i) + " is not unit norm");
}

indicator_table row_table_for(const dense_matrix& weights, const dataset& data) {
    if (weights.cols() != data.dim()) throw shape_error("kernel: weight/input dimension mismatch");
    return activation_signs(weights, data);
}

}  // namespace

std::string to_string(gram_kind kind) {
    switch (kind) {
        case gram_kind::infinite: return "infinite";
        case gram_kind::empirical_symmetric: return "empirical-symmetric";
        case gram_kind::empirical_asymmetric: return "empirical-asymmetric";
        case gram_kind::perp: return "perp";
    }
    return "?";
}

indicator_table activation_signs(const dense_matrix& weights, const dataset& data) {
    indicator_table t;
    t.points = data.size();
    t.width = weights.rows();
    t.words = (t.width + 63) / 64;
    t.bits.assign(t.points * t.words, 0);
    for (std::size_t i = 0; i < t.points; ++i) {
        auto x = data.point(i);
        std::uint64_t* row = t.bits.data() + i * t.words;
        for (std::size_t r = 0; r < t.width; ++r)
            if (dot(weights.row(r), x) >= 0.0) row[r / 64] |= (std::uint64_t{1} << (r % 64));
    }
    return t;
}

std::size_t pattern_sets::complement_size(std::size_t i) const {
    std::size_t in_set = 0;
    for (std::size_t w = 0; w < words; ++w) in_set += std::popcount(member[i * words + w]);
    return width - in_set;
}

pattern_sets make_pattern_sets(const dense_matrix& init_weights, const dataset& data,
                               double radius) {
    if (radius < 0.0) throw parameter_error("pattern_sets: R must be non-negative");
    if (init_weights.cols() != data.dim())
        throw shape_error("pattern_sets: weight/input dimension mismatch");
    pattern_sets p;
    p.radius = radius;
    p.points = data.size();
    p.width = init_weights.rows();
    p.words = (p.width + 63) / 64;
    p.member.assign(p.points * p.words, 0);
    for (std::size_t i = 0; i < p.points; ++i) {
        auto x = data.point(i);
        std::uint64_t* row = p.member.data() + i * p.words;
        for (std::size_t r = 0; r < p.width; ++r)
            if (std::fabs(dot(init_weights.row(r), x)) > radius)
                row[r / 64] |= (std::uint64_t{1} << (r % 64));
    }
    return p;
}

gram_matrix ntk_infinity(const dataset& data) {
    check_unit_norms(data);
    const std::size_t n = data.size();
    gram_matrix g;
    g.kind = gram_kind::infinite;
    g.matrix = dense_matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double ip = std::clamp(inner_product_table_entry(data, i, j), -1.0, 1.0);
            g.matrix(i, j) = ip * (k_pi - std::acos(ip)) / (2.0 * k_pi);
        }
    return g;
}

gram_matrix gram_pair(const dataset& data, const dense_matrix& left, const dense_matrix& right) {
    if (left.rows() != right.rows() || left.cols() != right.cols())
        throw shape_error("gram_pair: weight shapes differ");
    indicator_table lt = row_table_for(left, data);
    indicator_table rt = (left == right) ? lt : row_table_for(right, data);

    const std::size_t n = data.size();
    const double inv_m = 1.0 / static_cast<double>(left.rows());
    gram_matrix g;
    g.kind = (left == right) ? gram_kind::empirical_symmetric : gram_kind::empirical_asymmetric;
    g.matrix = dense_matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double ip = inner_product_table_entry(data, i, j);
            std::size_t cnt = and_popcount(lt.row(i), rt.row(j), lt.words);
            g.matrix(i, j) = ip * (static_cast<double>(cnt) * inv_m);
        }
    return g;
}

gram_matrix gram_round(const dataset& data, const client_partition& part,
                       const dense_matrix& global_weights,
                       const std::vector<dense_matrix>& local_weights) {
    part.validate(data.size());
    if (local_weights.size() != part.clients())
        throw parameter_error("gram_round: one local weight matrix per client required");
    for (const auto& w : local_weights)
        if (w.rows() != global_weights.rows() || w.cols() != global_weights.cols())
            throw shape_error("gram_round: local/global weight shapes differ");

    indicator_table rows = row_table_for(global_weights, data);
    const std::size_t n = data.size();
    const double inv_m = 1.0 / static_cast<double>(global_weights.rows());
    gram_matrix g;
    g.kind = gram_kind::empirical_asymmetric;
    g.matrix = dense_matrix(n, n);
    for (std::size_t c = 0; c < part.clients(); ++c) {
        indicator_table cols = row_table_for(local_weights[c], data);
        for (std::size_t j : part.assignments[c])
            for (std::size_t i = 0; i < n; ++i) {
                double ip = inner_product_table_entry(data, i, j);
                std::size_t cnt = and_popcount(rows.row(i), cols.row(j), rows.words);
                g.matrix(i, j) = ip * (static_cast<double>(cnt) * inv_m);
            }
    }
    return g;
}

gram_matrix gram_perp(const dataset& data, const client_partition& part,
                      const dense_matrix& global_weights,
                      const std::vector<dense_matrix>& local_weights,
                      const pattern_sets& patterns) {
    part.validate(data.size());
    if (patterns.width != global_weights.rows())
        throw shape_error("gram_perp: pattern sets built for a different width");
    if (local_weights.size() != part.clients())
        throw parameter_error("gram_perp: one local weight matrix per client required");

    indicator_table rows = row_table_for(global_weights, data);
    const std::size_t n = data.size();
    const std::size_t words = rows.words;
    const double inv_m = 1.0 / static_cast<double>(global_weights.rows());

    // Complement masks with the tail bits (beyond m) cleared.
    std::vector<std::uint64_t> comp(n * words);
    std::uint64_t tail = (patterns.width % 64)
                             ? ((std::uint64_t{1} << (patterns.width % 64)) - 1)
                             : ~std::uint64_t{0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t w = 0; w < words; ++w) {
            std::uint64_t v = ~patterns.member[i * words + w];
            if (w + 1 == words) v &= tail;
            comp[i * words + w] = v;
        }

    gram_matrix g;
    g.kind = gram_kind::perp;
    g.matrix = dense_matrix(n, n);
    for (std::size_t c = 0; c < part.clients(); ++c) {
        indicator_table cols = row_table_for(local_weights[c], data);
        for (std::size_t j : part.assignments[c])
            for (std::size_t i = 0; i < n; ++i) {
                double ip = inner_product_table_entry(data, i, j);
                std::size_t cnt =
                    and3_popcount(comp.data() + i * words, rows.row(i), cols.row(j), words);
                g.matrix(i, j) = ip * (static_cast<double>(cnt) * inv_m);
            }
    }
    return g;
}

spectrum_report spectrum(const gram_matrix& gram) {
    if (gram.kind != gram_kind::infinite && gram.kind != gram_kind::empirical_symmetric)
        throw contract_error("spectrum: requires a symmetric Gram matrix kind");
    eigh_result eig = eigh_symmetric(gram.matrix);
    spectrum_report rep;
    rep.lambda_min = eig.eigenvalues.front();
    rep.lambda_max = eig.eigenvalues.back();
    if (rep.lambda_min <= 1e-12)
        throw degenerate_spectrum_error("spectrum: lambda_min = " +
                                        std::to_string(rep.lambda_min) +
                                        " too small for a condition number");
    rep.condition_number = rep.lambda_max / rep.lambda_min;
    return rep;
}

double gram_drift(const gram_matrix& g_t, const gram_matrix& g_0) {
    if (g_t.size() != g_0.size()) throw shape_error("gram_drift: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < g_t.size(); ++i)
        for (std::size_t j = 0; j < g_t.size(); ++j) {
            double dlt = g_t.matrix(i, j) - g_0.matrix(i, j);
            s += dlt * dlt;
        }
    return std::sqrt(s);
}

void save(const gram_matrix& gram, const std::string& path) {
    std::string out;
    char buf[32];
    out += "# fl-ntk gram v1, kind=" + to_string(gram.kind) +
           ", n=" + std::to_string(gram.size()) + "\n";
    for (std::size_t i = 0; i < gram.size(); ++i) {
        for (std::size_t j = 0; j < gram.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", gram.matrix(i, j));
            out += buf;
            out += (j + 1 < gram.size()) ? ',' : '\n';
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << out;
}

}  // namespace flntk
