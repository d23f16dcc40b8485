#include "flntk/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "flntk/errors.hpp"

namespace flntk {

namespace {

constexpr double k_parallel_tol = 1.0 - 1e-9;

std::vector<double> unit_vector(rng_stream& rng, std::size_t d) {
    std::vector<double> v(d);
    double norm_sq = 0.0;
    do {
        norm_sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            v[k] = rng.next_gaussian();
            norm_sq += v[k] * v[k];
        }
    } while (norm_sq < 1e-24);
    double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
    return v;
}

bool parallel_to_earlier(const dense_matrix& inputs, std::size_t count,
                         std::span<const double> candidate) {
    for (std::size_t j = 0; j < count; ++j)
        if (std::fabs(dot(inputs.row(j), candidate)) > k_parallel_tol) return true;
    return false;
}

// Marsaglia-Tsang; the alpha < 1 case goes through Gamma(alpha + 1).
double gamma_sample(rng_stream& rng, double alpha) {
    if (alpha < 1.0) {
        double u = rng.next_uniform();
        while (u <= 0.0) u = rng.next_uniform();
        return gamma_sample(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = rng.next_gaussian();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        double u = rng.next_uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

void write_double(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

}  // namespace

void dataset::validate() const {
    if (size() < 1) throw validation_error("dataset: n must be >= 1");
    if (dim() < 2) throw validation_error("dataset: d must be >= 2");
    if (inputs.rows() != size()) throw validation_error("dataset: inputs/labels size mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
        double nrm = norm2(inputs.row(i));
        if (std::fabs(nrm - 1.0) > 1e-12)
            throw validation_error("dataset: point " + std::to_string(i) + " has norm " +
                                   std::to_string(nrm) + ", expected 1");
        if (!(std::fabs(labels[i]) <= 1.0) || !std::isfinite(labels[i]))
            throw validation_error("dataset: label " + std::to_string(i) + " outside [-1, 1]");
    }
}

std::size_t client_partition::total_points() const {
    std::size_t t = 0;
    for (const auto& s : assignments) t += s.size();
    return t;
}

void client_partition::validate(std::size_t n) const {
    std::vector<char> seen(n, 0);
    if (assignments.empty()) throw validation_error("partition: no clients");
    for (const auto& s : assignments) {
        if (s.empty()) throw validation_error("partition: empty client set");
        for (std::size_t idx : s) {
            if (idx >= n) throw validation_error("partition: index out of range");
            if (seen[idx]) throw validation_error("partition: duplicate index");
            seen[idx] = 1;
        }
    }
    if (total_points() != n) throw validation_error("partition: sets do not cover [n]");
}

dataset generate(const distribution_spec& spec, std::size_t n, std::size_t d, rng_stream rng) {
    if (n < 1) throw parameter_error("generate: n must be >= 1");
    if (d < 2) throw parameter_error("generate: d must be >= 2 (the unit sphere in 1D is {-1,+1})");
    if (spec.kind == input_kind::custom_loaded)
        throw parameter_error("generate: custom-loaded data comes from load_dataset");
    if (spec.kind == input_kind::uniform_sphere && spec.labels == label_rule::cluster_sign)
        throw parameter_error("generate: cluster-sign labels need two-cluster inputs");

    dataset out;
    out.inputs = dense_matrix(n, d);
    out.labels.assign(n, 0.0);

    std::vector<int> cluster_of(n, 0);
    std::vector<double> centers[2];
    if (spec.kind == input_kind::two_cluster) {
        centers[0] = unit_vector(rng, d);
        centers[1] = unit_vector(rng, d);
    }

    for (std::size_t i = 0; i < n; ++i) {
        for (;;) {
            std::vector<double> x;
            if (spec.kind == input_kind::uniform_sphere) {
                x = unit_vector(rng, d);
            } else {
                int z = static_cast<int>(i % 2);
                cluster_of[i] = z;
                x = centers[z];
                for (std::size_t k = 0; k < d; ++k) x[k] += 0.5 * rng.next_gaussian();
                double nrm = norm2(x);
                if (nrm < 1e-12) continue;
                for (double& v : x) v /= nrm;
            }
            if (!parallel_to_earlier(out.inputs, i, x)) {
                for (std::size_t k = 0; k < d; ++k) out.inputs(i, k) = x[k];
                break;
            }
        }
    }

    if (spec.labels == label_rule::linear_teacher) {
        std::vector<double> teacher = unit_vector(rng, d);
        for (std::size_t i = 0; i < n; ++i)
            out.labels[i] = std::clamp(dot(out.inputs.row(i), std::span<const double>(teacher)),
                                       -1.0, 1.0);
    } else {
        for (std::size_t i = 0; i < n; ++i) out.labels[i] = cluster_of[i] == 0 ? 1.0 : -1.0;
    }

    out.validate();
    return out;
}

client_partition partition_iid(std::size_t n, std::size_t num_clients, rng_stream rng) {
    if (num_clients < 1) throw parameter_error("partition_iid: N must be >= 1");
    if (num_clients > n) throw parameter_error("partition_iid: N must not exceed n");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = rng.next_u64() % i;
        std::swap(order[i - 1], order[j]);
    }

    client_partition part;
    part.assignments.resize(num_clients);
    for (std::size_t i = 0; i < n; ++i) part.assignments[i % num_clients].push_back(order[i]);
    for (auto& s : part.assignments) std::sort(s.begin(), s.end());
    part.validate(n);
    return part;
}

client_partition partition_skewed(const std::vector<double>& labels, std::size_t num_clients,
                                  double alpha, rng_stream rng) {
    const std::size_t n = labels.size();
    if (alpha <= 0.0) throw parameter_error("partition_skewed: alpha must be positive");
    if (num_clients < 1) throw parameter_error("partition_skewed: N must be >= 1");
    if (num_clients > n) throw parameter_error("partition_skewed: N must not exceed n");

    // Two sign classes; scalar labels carry no finer class structure.
    std::vector<std::size_t> classes[2];
    for (std::size_t i = 0; i < n; ++i) classes[labels[i] >= 0.0 ? 0 : 1].push_back(i);

    client_partition part;
    part.assignments.resize(num_clients);
    for (auto& cls : classes) {
        if (cls.empty()) continue;
        for (std::size_t i = cls.size(); i > 1; --i) {
            std::size_t j = rng.next_u64() % i;
            std::swap(cls[i - 1], cls[j]);
        }
        std::vector<double> w(num_clients);
        double total = 0.0;
        for (auto& v : w) {
            v = gamma_sample(rng, alpha);
            total += v;
        }
        // Largest-remainder allocation of |class| points to the proportions.
        std::vector<std::size_t> count(num_clients, 0);
        std::vector<std::pair<double, std::size_t>> rem(num_clients);
        std::size_t assigned = 0;
        for (std::size_t c = 0; c < num_clients; ++c) {
            double share = w[c] / total * static_cast<double>(cls.size());
            count[c] = static_cast<std::size_t>(share);
            rem[c] = {share - static_cast<double>(count[c]), c};
            assigned += count[c];
        }
        std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t k = 0; assigned < cls.size(); ++k, ++assigned) ++count[rem[k].second];

        std::size_t pos = 0;
        for (std::size_t c = 0; c < num_clients; ++c)
            for (std::size_t k = 0; k < count[c]; ++k) part.assignments[c].push_back(cls[pos++]);
    }

    // Repair pass: every client must hold at least one point.
    for (std::size_t c = 0; c < num_clients; ++c) {
        if (!part.assignments[c].empty()) continue;
        std::size_t donor = 0;
        for (std::size_t k = 1; k < num_clients; ++k)
            if (part.assignments[k].size() > part.assignments[donor].size()) donor = k;
        if (part.assignments[donor].size() <= 1)
            throw validation_error("partition_skewed: cannot repair empty client");
        part.assignments[c].push_back(part.assignments[donor].back());
        part.assignments[donor].pop_back();
    }

    for (auto& s : part.assignments) std::sort(s.begin(), s.end());
    part.validate(n);
    return part;
}

void save(const dataset& data, const std::string& path) {
    std::string out;
    out += "# fl-ntk dataset v1, n=" + std::to_string(data.size()) +
           ", d=" + std::to_string(data.dim()) + "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t k = 0; k < data.dim(); ++k) {
            write_double(out, data.inputs(i, k));
            out += ',';
        }
        write_double(out, data.labels[i]);
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << out;
}

void save(const client_partition& part, const std::string& path) {
    std::string out;
    out += "# fl-ntk partition v1, n=" + std::to_string(part.total_points()) +
           ", N=" + std::to_string(part.clients()) + "\n";
    for (std::size_t c = 0; c < part.clients(); ++c)
        for (std::size_t idx : part.assignments[c])
            out += std::to_string(c) + "," + std::to_string(idx) + "\n";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << out;
}

namespace {

struct header_fields {
    std::string tag;
    std::vector<std::pair<std::string, std::string>> kv;
};

header_fields parse_header(const std::string& line, std::size_t line_no) {
    if (line.empty() || line[0] != '#') throw parse_error("missing header", line_no);
    header_fields h;
    std::stringstream ss(line.substr(1));
    std::string piece;
    bool first = true;
    while (std::getline(ss, piece, ',')) {
        std::size_t b = piece.find_first_not_of(' ');
        if (b == std::string::npos) continue;
        piece = piece.substr(b);
        if (first) {
            h.tag = piece;
            first = false;
        } else {
            std::size_t eq = piece.find('=');
            if (eq == std::string::npos) throw parse_error("malformed header field", line_no);
            h.kv.emplace_back(piece.substr(0, eq), piece.substr(eq + 1));
        }
    }
    return h;
}

std::size_t header_count(const header_fields& h, const std::string& key, std::size_t line_no) {
    for (const auto& [k, v] : h.kv)
        if (k == key) return static_cast<std::size_t>(std::stoull(v));
    throw parse_error("header missing field " + key, line_no);
}

}  // namespace

dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(f, line)) throw parse_error("empty file", line_no);
    header_fields h = parse_header(line, line_no);
    if (h.tag != "fl-ntk dataset v1") throw parse_error("unexpected header tag", line_no);
    std::size_t n = header_count(h, "n", line_no);
    std::size_t d = header_count(h, "d", line_no);

    dataset out;
    out.inputs = dense_matrix(n, d);
    out.labels.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        ++line_no;
        if (!std::getline(f, line)) throw parse_error("truncated file: expected data row", line_no);
        std::stringstream ss(line);
        std::string cell;
        for (std::size_t k = 0; k <= d; ++k) {
            if (!std::getline(ss, cell, ','))
                throw parse_error("row has too few columns", line_no);
            char* end = nullptr;
            double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) throw parse_error("not a number: " + cell, line_no);
            if (k < d)
                out.inputs(i, k) = v;
            else
                out.labels[i] = v;
        }
        if (std::getline(ss, cell, ',')) throw parse_error("row has too many columns", line_no);
    }
    out.validate();
    return out;
}

client_partition load_partition(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(f, line)) throw parse_error("empty file", line_no);
    header_fields h = parse_header(line, line_no);
    if (h.tag != "fl-ntk partition v1") throw parse_error("unexpected header tag", line_no);
    std::size_t n = header_count(h, "n", line_no);
    std::size_t num_clients = header_count(h, "N", line_no);

    client_partition part;
    part.assignments.resize(num_clients);
    for (std::size_t row = 0; row < n; ++row) {
        ++line_no;
        if (!std::getline(f, line)) throw parse_error("truncated file: expected assignment row", line_no);
        std::stringstream ss(line);
        std::string a, b, extra;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ','))
            throw parse_error("expected client_index,point_index", line_no);
        if (std::getline(ss, extra, ',')) throw parse_error("row has too many columns", line_no);
        std::size_t c = std::stoull(a), idx = std::stoull(b);
        if (c >= num_clients) throw parse_error("client index out of range", line_no);
        part.assignments[c].push_back(idx);
    }
    part.validate(n);
    return part;
}

}  // namespace flntk
