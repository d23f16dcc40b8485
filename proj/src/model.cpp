#include "flntk/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flntk/errors.hpp"
#include "flntk/linalg.hpp"

namespace flntk {

model_params init(std::size_t m, std::size_t d, double sigma, const rng_stream& rng) {
    if (m < 1) throw parameter_error("init: m must be >= 1");
    if (d < 1) throw parameter_error("init: d must be >= 1");
    if (!(sigma > 0.0)) throw parameter_error("init: sigma must be positive");

    model_params p;
    p.sigma = sigma;
    p.weights = gaussian_matrix(rng.split(0), m, d, sigma);
    rng_stream sign_rng = rng.split(1);
    p.signs.resize(m);
    for (std::size_t r = 0; r < m; ++r)
        p.signs[r] = (sign_rng.next_u64() & 1u) ? 1.0 : -1.0;
    return p;
}

double forward(const model_params& params, std::span<const double> x) {
    if (x.size() != params.dim()) throw shape_error("forward: input dimension mismatch");
    const std::size_t m = params.width();
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    compensated_sum acc;
    for (std::size_t r = 0; r < m; ++r) {
        double pre = dot(params.weights.row(r), x);
        if (pre > 0.0) acc.add(params.signs[r] * pre);
    }
    return inv_sqrt_m * acc.value();
}

prediction forward_all(const model_params& params, const dataset& data) {
    prediction out;
    out.values.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.values[i] = forward(params, data.point(i));
    return out;
}

prediction forward_all(const model_params& params, const dataset& data,
                       const std::vector<std::size_t>& indices) {
    prediction out;
    out.values.resize(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k)
        out.values[k] = forward(params, data.point(indices[k]));
    return out;
}

dense_matrix client_gradient(const model_params& params, const dataset& data,
                             const std::vector<std::size_t>& client_points) {
    if (client_points.empty()) throw parameter_error("client_gradient: empty client set");
    const std::size_t m = params.width(), d = params.dim();
    if (data.dim() != d) throw shape_error("client_gradient: dimension mismatch");

    std::vector<double> residual(client_points.size());
    for (std::size_t k = 0; k < client_points.size(); ++k) {
        std::size_t i = client_points[k];
        if (i >= data.size()) throw parameter_error("client_gradient: index out of range");
        residual[k] = forward(params, data.point(i)) - data.labels[i];
    }

    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
    dense_matrix grad(m, d, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        auto w_r = params.weights.row(r);
        auto g_r = grad.row(r);
        const double a_r = params.signs[r];
        for (std::size_t k = 0; k < client_points.size(); ++k) {
            auto x = data.point(client_points[k]);
            if (dot(w_r, x) >= 0.0) {
                double coef = inv_sqrt_m * residual[k] * a_r;
                for (std::size_t j = 0; j < d; ++j) g_r[j] += coef * x[j];
            }
        }
    }
    return grad;
}

loss_report loss(const model_params& params, const dataset& data, const client_partition& part) {
    part.validate(data.size());
    loss_report rep;
    rep.per_client.resize(part.clients(), 0.0);
    compensated_sum res_sq;
    for (std::size_t c = 0; c < part.clients(); ++c) {
        compensated_sum client_sq;
        for (std::size_t i : part.assignments[c]) {
            double r = forward(params, data.point(i)) - data.labels[i];
            client_sq.add(r * r);
        }
        rep.per_client[c] = 0.5 * client_sq.value();
        res_sq.add(client_sq.value());
    }
    compensated_sum total;
    for (double l : rep.per_client) total.add(l);
    rep.total = total.value() / static_cast<double>(part.clients());
    rep.residual_sq = res_sq.value();
    return rep;
}

void save(const model_params& params, const std::string& path) {
    const std::size_t m = params.width(), d = params.dim();
    std::string out;
    char buf[32];
    out += "# fl-ntk params v1, d=" + std::to_string(d) + ", m=" + std::to_string(m) + ", sigma=";
    std::snprintf(buf, sizeof buf, "%.17g", params.sigma);
    out += buf;
    out += '\n';
    for (std::size_t r = 0; r < m; ++r) {
        std::snprintf(buf, sizeof buf, "%.17g", params.signs[r]);
        out += buf;
        out += (r + 1 < m) ? ',' : '\n';
    }
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t r = 0; r < m; ++r) {
            std::snprintf(buf, sizeof buf, "%.17g", params.weights(r, j));
            out += buf;
            out += (r + 1 < m) ? ',' : '\n';
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for writing: " + path);
    f << out;
}

model_params load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open: " + path);
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(f, line)) throw parse_error("empty file", line_no);
    if (line.rfind("# fl-ntk params v1", 0) != 0) throw parse_error("unexpected header tag", line_no);

    std::size_t d = 0, m = 0;
    double sigma = 0.0;
    {
        std::stringstream ss(line);
        std::string piece;
        while (std::getline(ss, piece, ',')) {
            std::size_t eq = piece.find('=');
            if (eq == std::string::npos) continue;
            std::string key = piece.substr(0, eq);
            std::size_t b = key.find_first_not_of(' ');
            key = key.substr(b);
            std::string val = piece.substr(eq + 1);
            if (key == "d") d = std::stoull(val);
            if (key == "m") m = std::stoull(val);
            if (key == "sigma") sigma = std::stod(val);
        }
    }
    if (d == 0 || m == 0) throw parse_error("header missing d or m", line_no);

    auto read_row = [&](std::size_t expect) {
        ++line_no;
        if (!std::getline(f, line)) throw parse_error("truncated file", line_no);
        std::vector<double> vals;
        vals.reserve(expect);
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) throw parse_error("not a number: " + cell, line_no);
            vals.push_back(v);
        }
        if (vals.size() != expect) throw parse_error("wrong column count", line_no);
        return vals;
    };

    model_params p;
    p.sigma = sigma;
    p.signs = read_row(m);
    for (double s : p.signs)
        if (s != 1.0 && s != -1.0) throw validation_error("params: sign not in {-1, +1}");
    p.weights = dense_matrix(m, d);
    for (std::size_t j = 0; j < d; ++j) {
        std::vector<double> row = read_row(m);
        for (std::size_t r = 0; r < m; ++r) p.weights(r, j) = row[r];
    }
    if (!p.weights.all_finite()) throw validation_error("params: non-finite weight");
    return p;
}

}  // namespace flntk
