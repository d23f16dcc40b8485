// fl-ntk command line: batch experiment runner around the library.
// Subcommands: gen-data, kernel, train, sweep-clients, verify.
// Exit codes: 0 ok, 1 usage/config, 2 I/O, 3 divergence, 4 degenerate spectrum.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "flntk/dataset.hpp"
#include "flntk/kernel.hpp"
#include "flntk/linalg.hpp"
#include "flntk/model.hpp"
#include "flntk/theory.hpp"
#include "flntk/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace flntk;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_io = 2;
constexpr int exit_divergence = 3;
constexpr int exit_degenerate = 4;

struct run_config {
    std::size_t n = 16;
    std::size_t d = 8;
    std::size_t m = 4096;
    std::size_t clients = 4;
    std::size_t local_steps = 1;
    std::optional<std::size_t> rounds;  // absent: derive from eps via rounds_to_eps
    std::optional<double> eta_local;    // absent: prescribed from measured spectrum
    double eta_global = 1.0;
    double safety_c = 1.0;
    double sigma = 1.0;
    double eps = 1e-3;
    double delta = 0.05;
    std::vector<std::uint64_t> seeds{1};
    std::string data_kind = "uniform-sphere";
    std::string label_rule_name = "linear-teacher";
    std::string partition_mode = "iid";  // or skewed:<alpha>
    std::string record = "bounds";
    bool audits = true;
    bool gen_bound = false;
    std::size_t threads = 1;
    std::vector<std::size_t> client_sweep{2, 4, 8};
    std::vector<std::size_t> width_sweep;
    std::string data_dir;  // directory holding dataset.csv / partition.csv
    std::string out_dir = "out";
};

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::uint64_t> parse_u64_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        piece = trim(piece);
        if (!piece.empty()) out.push_back(std::stoull(piece));
    }
    if (out.empty()) throw parameter_error("empty list: " + text);
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
    std::vector<std::size_t> out;
    for (std::uint64_t v : parse_u64_list(text)) out.push_back(static_cast<std::size_t>(v));
    return out;
}

void apply_key(run_config& cfg, const std::string& key, const std::string& value) {
    if (key == "n") cfg.n = std::stoull(value);
    else if (key == "d") cfg.d = std::stoull(value);
    else if (key == "m") cfg.m = std::stoull(value);
    else if (key == "N") cfg.clients = std::stoull(value);
    else if (key == "K") cfg.local_steps = std::stoull(value);
    else if (key == "T") cfg.rounds = std::stoull(value);
    else if (key == "eta_local") cfg.eta_local = std::stod(value);
    else if (key == "eta_global") cfg.eta_global = std::stod(value);
    else if (key == "safety_c") cfg.safety_c = std::stod(value);
    else if (key == "sigma") cfg.sigma = std::stod(value);
    else if (key == "eps") cfg.eps = std::stod(value);
    else if (key == "delta") cfg.delta = std::stod(value);
    else if (key == "seeds") cfg.seeds = parse_u64_list(value);
    else if (key == "data_kind") cfg.data_kind = value;
    else if (key == "label_rule") cfg.label_rule_name = value;
    else if (key == "partition") cfg.partition_mode = value;
    else if (key == "record") cfg.record = value;
    else if (key == "audits") cfg.audits = (value == "on" || value == "true" || value == "1");
    else if (key == "gen_bound") cfg.gen_bound = (value == "on" || value == "true" || value == "1");
    else if (key == "threads") cfg.threads = std::stoull(value);
    else if (key == "N_list") cfg.client_sweep = parse_size_list(value);
    else if (key == "m_list") cfg.width_sweep = parse_size_list(value);
    else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "out") cfg.out_dir = value;
    else throw parameter_error("unknown config key: " + key);
}

void load_config_file(run_config& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config: " + path);
    std::string first_line;
    std::getline(f, first_line);
    f.seekg(0);
    if (!first_line.empty() && trim(first_line)[0] == '{') {
        json j = json::parse(f);
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.value().is_string())
                apply_key(cfg, it.key(), it.value().get<std::string>());
            else
                apply_key(cfg, it.key(), it.value().dump());
        }
        return;
    }
    std::string line;
    while (std::getline(f, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw parameter_error("config line missing '=': " + line);
        apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

record_level parse_record(const std::string& name) {
    if (name == "loss-only") return record_level::loss_only;
    if (name == "bounds") return record_level::bounds;
    if (name == "full-states") return record_level::full_states;
    throw parameter_error("unknown record level: " + name);
}

distribution_spec parse_distribution(const run_config& cfg) {
    distribution_spec spec;
    if (cfg.data_kind == "uniform-sphere") spec.kind = input_kind::uniform_sphere;
    else if (cfg.data_kind == "two-cluster") spec.kind = input_kind::two_cluster;
    else throw parameter_error("unknown data kind: " + cfg.data_kind);
    if (cfg.label_rule_name == "linear-teacher") spec.labels = label_rule::linear_teacher;
    else if (cfg.label_rule_name == "cluster-sign") spec.labels = label_rule::cluster_sign;
    else throw parameter_error("unknown label rule: " + cfg.label_rule_name);
    return spec;
}

client_partition make_partition(const run_config& cfg, const dataset& data, std::uint64_t seed,
                                std::size_t clients) {
    rng_stream rng(seed, stream_ids::partition);
    if (cfg.partition_mode == "iid") return partition_iid(data.size(), clients, rng);
    if (cfg.partition_mode.rfind("skewed:", 0) == 0) {
        double alpha = std::stod(cfg.partition_mode.substr(7));
        return partition_skewed(data.labels, clients, alpha, rng);
    }
    throw parameter_error("unknown partition mode: " + cfg.partition_mode);
}

// Canonical key=value echo; sorted keys make reruns byte-identical.
void echo_config(const run_config& cfg, const fs::path& dir) {
    std::map<std::string, std::string> kv;
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    kv["n"] = std::to_string(cfg.n);
    kv["d"] = std::to_string(cfg.d);
    kv["m"] = std::to_string(cfg.m);
    kv["N"] = std::to_string(cfg.clients);
    kv["K"] = std::to_string(cfg.local_steps);
    if (cfg.rounds) kv["T"] = std::to_string(*cfg.rounds);
    if (cfg.eta_local) kv["eta_local"] = num(*cfg.eta_local);
    kv["eta_global"] = num(cfg.eta_global);
    kv["safety_c"] = num(cfg.safety_c);
    kv["sigma"] = num(cfg.sigma);
    kv["eps"] = num(cfg.eps);
    kv["delta"] = num(cfg.delta);
    std::string seeds;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
        seeds += (i ? "," : "") + std::to_string(cfg.seeds[i]);
    kv["seeds"] = seeds;
    kv["data_kind"] = cfg.data_kind;
    kv["label_rule"] = cfg.label_rule_name;
    kv["partition"] = cfg.partition_mode;
    kv["record"] = cfg.record;
    kv["audits"] = cfg.audits ? "on" : "off";
    kv["gen_bound"] = cfg.gen_bound ? "on" : "off";
    kv["threads"] = std::to_string(cfg.threads);
    std::string nlist;
    for (std::size_t i = 0; i < cfg.client_sweep.size(); ++i)
        nlist += (i ? "," : "") + std::to_string(cfg.client_sweep[i]);
    kv["N_list"] = nlist;
    if (!cfg.width_sweep.empty()) {
        std::string mlist;
        for (std::size_t i = 0; i < cfg.width_sweep.size(); ++i)
            mlist += (i ? "," : "") + std::to_string(cfg.width_sweep[i]);
        kv["m_list"] = mlist;
    }
    if (!cfg.data_dir.empty()) kv["data_dir"] = cfg.data_dir;

    std::ofstream f(dir / "effective_config.txt", std::ios::binary);
    if (!f) throw io_error("cannot write effective config");
    for (const auto& [k, v] : kv) f << k << '=' << v << '\n';
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

struct loaded_data {
    dataset data;
    client_partition part;
};

loaded_data load_data_dir(const std::string& dir) {
    if (dir.empty()) throw parameter_error("--data <dir> is required for this command");
    loaded_data out;
    out.data = load_dataset((fs::path(dir) / "dataset.csv").string());
    out.part = load_partition((fs::path(dir) / "partition.csv").string());
    return out;
}

// Pass rule for probabilistic audits: allow one failing seed per five.
bool seed_majority(std::size_t passing, std::size_t total) {
    return passing + total / 5 >= total;
}

struct seed_run_summary {
    json j;
    bool audits_pass = true;
};

seed_run_summary run_one_seed(const run_config& cfg, const dataset& data,
                              const client_partition& part, std::uint64_t seed,
                              const fs::path& dir) {
    fs::create_directories(dir);

    model_params probe = init(cfg.m, data.dim(), cfg.sigma, rng_stream(seed, stream_ids::init));
    gram_matrix h0 = gram_pair(data, probe.weights, probe.weights);
    spectrum_report spec = spectrum(h0);  // throws degenerate_spectrum_error when singular

    double eta_local = cfg.eta_local
                           ? *cfg.eta_local
                           : prescribed_rates(spec.lambda_min, spec.condition_number, data.size(),
                                              cfg.local_steps, cfg.safety_c)
                                 .eta_local;
    contraction factor = contraction_factor(spec.lambda_min, eta_local, cfg.eta_global,
                                            cfg.local_steps, part.clients());
    std::optional<std::size_t> theory_rounds;
    if (factor.in_regime) theory_rounds = rounds_to_eps(factor.factor, cfg.eps);

    if (!cfg.rounds && !theory_rounds)
        throw parameter_error("T not given and the contraction factor is out of regime");
    std::size_t rounds = cfg.rounds ? *cfg.rounds : *theory_rounds;

    train_config tc;
    tc.clients = part.clients();
    tc.local_steps = cfg.local_steps;
    tc.rounds = rounds;
    tc.eta_local = eta_local;
    tc.eta_global = cfg.eta_global;
    tc.width = cfg.m;
    tc.sigma = cfg.sigma;
    tc.seed = seed;
    tc.level = parse_record(cfg.record);
    tc.threads = cfg.threads;

    train_trace trace;
    bool diverged = false;
    std::string divergence_what;
    try {
        trace = train(tc, data, part);
    } catch (train_divergence_error& e) {
        trace = std::move(e.partial_trace);
        diverged = true;
        divergence_what = e.what();
    }
    save_trace(trace, (dir / "trace.csv").string());
    if (tc.level != record_level::loss_only)
        save_local_trace(trace, (dir / "trace_local.csv").string());

    double res0 = trace.per_round.front().residual_sq;
    double res_final = trace.per_round.back().residual_sq;
    std::optional<std::size_t> crossed;
    for (std::size_t t = 0; t < trace.per_round.size(); ++t)
        if (trace.per_round[t].residual_sq <= cfg.eps * res0) {
            crossed = t;
            break;
        }

    seed_run_summary out;
    out.j["seed"] = seed;
    out.j["rounds"] = trace.per_round.size() - 1;
    out.j["initial_residual_sq"] = res0;
    out.j["final_residual_sq"] = res_final;
    out.j["lambda_min_h0"] = spec.lambda_min;
    out.j["kappa_h0"] = spec.condition_number;
    out.j["eta_local"] = eta_local;
    out.j["eta_global"] = cfg.eta_global;
    out.j["contraction_factor"] = factor.factor;
    out.j["in_regime"] = factor.in_regime;
    if (theory_rounds)
        out.j["rounds_to_eps_theoretical"] = *theory_rounds;
    else
        out.j["rounds_to_eps_theoretical"] = nullptr;
    if (crossed)
        out.j["rounds_to_eps_measured"] = *crossed;
    else
        out.j["rounds_to_eps_measured"] = nullptr;
    out.j["diverged"] = diverged;

    if (diverged) {
        write_json(out.j, dir / "summary.json");
        throw train_divergence_error(divergence_what + "; partial trace in " + dir.string(),
                                     std::move(trace));
    }

    if (cfg.audits && tc.level != record_level::loss_only && trace.per_round.size() >= 2) {
        contraction_audit con = audit_contraction(trace, factor.factor);
        auto mv = movement_bounds(trace, data.size(), cfg.m, spec.lambda_min);
        auto dev = local_deviation_bounds(trace, eta_local, data.size(), cfg.local_steps);
        std::vector<bound_report> all;
        all.insert(all.end(), con.per_round.begin(), con.per_round.end());
        all.insert(all.end(), mv.begin(), mv.end());
        all.insert(all.end(), dev.begin(), dev.end());
        save_reports(all, (dir / "bounds.csv").string());

        bool contraction_ok = con.pass_fraction >= 0.9;
        bool movement_ok = all_hold(mv);
        bool deviation_ok = all_hold(dev);
        out.j["audits"] = {{"contraction_pass_fraction", con.pass_fraction},
                           {"contraction_ok", contraction_ok},
                           {"movement_ok", movement_ok},
                           {"deviation_ok", deviation_ok}};
        out.audits_pass = contraction_ok && movement_ok && deviation_ok;
    }
    write_json(out.j, dir / "summary.json");
    return out;
}

int cmd_gen_data(const run_config& cfg) {
    fs::create_directories(cfg.out_dir);
    std::uint64_t seed = cfg.seeds.front();
    dataset data =
        generate(parse_distribution(cfg), cfg.n, cfg.d, rng_stream(seed, stream_ids::data));
    client_partition part = make_partition(cfg, data, seed, cfg.clients);
    save(data, (fs::path(cfg.out_dir) / "dataset.csv").string());
    save(part, (fs::path(cfg.out_dir) / "partition.csv").string());
    echo_config(cfg, cfg.out_dir);

    gram_matrix h_inf = ntk_infinity(data);
    spectrum_report inf_spec = spectrum(h_inf);
    model_params probe = init(cfg.m, cfg.d, cfg.sigma, rng_stream(seed, stream_ids::init));
    gram_matrix h0 = gram_pair(data, probe.weights, probe.weights);
    spectrum_report h0_spec = spectrum(h0);
    std::cout << "dataset: n=" << cfg.n << " d=" << cfg.d << " seed=" << seed << '\n'
              << "lambda_min(H_inf)=" << inf_spec.lambda_min
              << " lambda_max(H_inf)=" << inf_spec.lambda_max << '\n'
              << "lambda_min(H0)=" << h0_spec.lambda_min
              << " kappa(H0)=" << h0_spec.condition_number << " (m=" << cfg.m << ")\n";
    return exit_ok;
}

// Locate the most parallel input pair for degenerate-spectrum diagnostics.
std::pair<std::size_t, std::size_t> most_parallel_pair(const dataset& data) {
    std::size_t bi = 0, bj = 1;
    double best = -1.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t j = i + 1; j < data.size(); ++j) {
            double ip = std::fabs(dot(data.point(i), data.point(j)));
            if (ip > best) {
                best = ip;
                bi = i;
                bj = j;
            }
        }
    return {bi, bj};
}

int cmd_kernel(const run_config& cfg) {
    loaded_data in = load_data_dir(cfg.data_dir.empty() ? cfg.out_dir : cfg.data_dir);
    fs::create_directories(cfg.out_dir);
    echo_config(cfg, cfg.out_dir);

    gram_matrix h_inf = ntk_infinity(in.data);
    save(h_inf, (fs::path(cfg.out_dir) / "h_infinity.csv").string());
    spectrum_report inf_spec;
    try {
        inf_spec = spectrum(h_inf);
    } catch (const degenerate_spectrum_error&) {
        auto [i, j] = most_parallel_pair(in.data);
        std::cerr << "degenerate spectrum: inputs " << i << " and " << j
                  << " are (near-)parallel, |x_i^T x_j| = "
                  << std::fabs(dot(in.data.point(i), in.data.point(j))) << '\n';
        return exit_degenerate;
    }

    json summary;
    summary["n"] = in.data.size();
    summary["lambda_min_h_inf"] = inf_spec.lambda_min;
    summary["lambda_max_h_inf"] = inf_spec.lambda_max;
    summary["kappa_h_inf"] = inf_spec.condition_number;

    std::uint64_t seed = cfg.seeds.front();
    model_params probe = init(cfg.m, in.data.dim(), cfg.sigma, rng_stream(seed, stream_ids::init));
    gram_matrix h0 = gram_pair(in.data, probe.weights, probe.weights);
    save(h0, (fs::path(cfg.out_dir) / "h0.csv").string());
    spectrum_report h0_spec = spectrum(h0);
    summary["lambda_min_h0"] = h0_spec.lambda_min;
    summary["lambda_max_h0"] = h0_spec.lambda_max;
    summary["kappa_h0"] = h0_spec.condition_number;
    summary["fro_gap_h0_h_inf"] = gram_drift(h0, h_inf);

    if (!cfg.width_sweep.empty()) {
        std::string csv = "m,seed,fro_gap\n";
        json medians = json::array();
        char buf[32];
        for (std::size_t m : cfg.width_sweep) {
            std::vector<double> gaps;
            for (std::uint64_t s : cfg.seeds) {
                model_params p =
                    init(m, in.data.dim(), cfg.sigma, rng_stream(s, stream_ids::init));
                double gap = gram_drift(gram_pair(in.data, p.weights, p.weights), h_inf);
                gaps.push_back(gap);
                std::snprintf(buf, sizeof buf, "%.17g", gap);
                csv += std::to_string(m) + "," + std::to_string(s) + "," + buf + "\n";
            }
            std::sort(gaps.begin(), gaps.end());
            medians.push_back({{"m", m}, {"median_fro_gap", gaps[gaps.size() / 2]}});
        }
        std::ofstream f(fs::path(cfg.out_dir) / "kernel_msweep.csv", std::ios::binary);
        if (!f) throw io_error("cannot write kernel_msweep.csv");
        f << csv;
        summary["m_sweep"] = medians;
    }

    if (cfg.gen_bound) {
        generalization_report rep = generalization_bound(h_inf, in.data.labels, cfg.delta);
        summary["generalization_bound"] = {{"complexity_term", rep.complexity_term},
                                           {"slack_term", rep.slack_term},
                                           {"total", rep.total}};
        std::cout << "generalization bound (delta=" << cfg.delta << "): " << rep.total << '\n';
    }

    write_json(summary, fs::path(cfg.out_dir) / "summary.json");
    std::cout << "lambda_min(H_inf)=" << inf_spec.lambda_min
              << " kappa(H0)=" << h0_spec.condition_number
              << " |H0-H_inf|_F=" << gram_drift(h0, h_inf) << '\n';
    return exit_ok;
}

int cmd_train(const run_config& cfg) {
    loaded_data in = load_data_dir(cfg.data_dir.empty() ? cfg.out_dir : cfg.data_dir);
    fs::create_directories(cfg.out_dir);
    echo_config(cfg, cfg.out_dir);

    json top;
    top["seeds"] = json::array();
    std::size_t passing = 0;
    bool diverged = false;
    for (std::uint64_t seed : cfg.seeds) {
        fs::path dir = fs::path(cfg.out_dir) / ("seed_" + std::to_string(seed));
        try {
            seed_run_summary one = run_one_seed(cfg, in.data, in.part, seed, dir);
            passing += one.audits_pass ? 1 : 0;
            top["seeds"].push_back(one.j);
        } catch (const train_divergence_error& e) {
            diverged = true;
            json j;
            j["seed"] = seed;
            j["diverged"] = true;
            top["seeds"].push_back(j);
            std::cerr << "seed " << seed << ": " << e.what() << '\n';
        }
    }
    top["audit_passing_seeds"] = passing;
    top["seed_count"] = cfg.seeds.size();
    bool ok = seed_majority(passing, cfg.seeds.size());
    top["audits_pass_majority"] = ok;
    write_json(top, fs::path(cfg.out_dir) / "summary.json");
    if (diverged) return exit_divergence;
    if (cfg.audits && !ok) return exit_divergence;
    return exit_ok;
}

int cmd_sweep_clients(const run_config& cfg) {
    if (!cfg.rounds)
        throw parameter_error("sweep-clients requires T (the per-run round budget)");
    fs::create_directories(cfg.out_dir);
    echo_config(cfg, cfg.out_dir);

    std::string csv = "N,seed,rounds_to_eps_measured,final_residual_sq\n";
    json top;
    top["per_client_count"] = json::array();
    char buf[32];
    for (std::size_t clients : cfg.client_sweep) {
        if (clients == 0 || cfg.n % clients != 0)
            throw parameter_error("sweep-clients: N=" + std::to_string(clients) +
                                  " does not divide n=" + std::to_string(cfg.n));
        std::vector<double> rounds_needed;
        for (std::uint64_t seed : cfg.seeds) {
            dataset data = generate(parse_distribution(cfg), cfg.n, cfg.d,
                                    rng_stream(seed, stream_ids::data));
            client_partition part = make_partition(cfg, data, seed, clients);

            run_config local = cfg;
            local.clients = clients;
            local.audits = false;
            fs::path dir = fs::path(cfg.out_dir) /
                           ("N_" + std::to_string(clients) + "_seed_" + std::to_string(seed));
            seed_run_summary one = run_one_seed(local, data, part, seed, dir);
            double measured = one.j["rounds_to_eps_measured"].is_null()
                                  ? static_cast<double>(*cfg.rounds + 1)
                                  : one.j["rounds_to_eps_measured"].get<double>();
            rounds_needed.push_back(measured);
            std::snprintf(buf, sizeof buf, "%.17g", one.j["final_residual_sq"].get<double>());
            csv += std::to_string(clients) + "," + std::to_string(seed) + "," +
                   std::to_string(static_cast<std::size_t>(measured)) + "," + buf + "\n";
        }
        std::sort(rounds_needed.begin(), rounds_needed.end());
        double median = rounds_needed[rounds_needed.size() / 2];
        top["per_client_count"].push_back({{"N", clients}, {"median_rounds_to_eps", median}});
    }
    std::ofstream f(fs::path(cfg.out_dir) / "sweep.csv", std::ios::binary);
    if (!f) throw io_error("cannot write sweep.csv");
    f << csv;
    write_json(top, fs::path(cfg.out_dir) / "summary.json");
    return exit_ok;
}

// Re-audit an existing run directory from its CSV traces.
int cmd_verify(const run_config& cfg) {
    fs::path run_dir(cfg.out_dir);
    loaded_data in = load_data_dir(cfg.data_dir);

    std::vector<fs::path> seed_dirs;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        if (!entry.is_directory()) continue;
        if (entry.path().filename().string().rfind("seed_", 0) == 0)
            seed_dirs.push_back(entry.path());
    }
    std::sort(seed_dirs.begin(), seed_dirs.end());
    if (seed_dirs.empty()) throw io_error("no seed_* directories under " + run_dir.string());

    json top;
    top["verified_seeds"] = json::array();
    std::size_t passing = 0;
    for (const fs::path& dir : seed_dirs) {
        std::uint64_t seed = std::stoull(dir.filename().string().substr(5));

        train_trace trace;
        trace.level = record_level::bounds;
        trace.clients = cfg.clients;
        trace.local_steps = cfg.local_steps;
        trace.eta_global = cfg.eta_global;
        trace.width = cfg.m;
        {
            std::ifstream tf(dir / "trace.csv");
            if (!tf) throw io_error("missing trace.csv in " + dir.string());
            std::string line;
            std::getline(tf, line);
            std::size_t line_no = 1;
            while (std::getline(tf, line)) {
                ++line_no;
                std::stringstream ss(line);
                std::string cell;
                round_record rec;
                if (!std::getline(ss, cell, ',')) throw parse_error("bad trace row", line_no);
                std::getline(ss, cell, ',');
                rec.residual_sq = std::stod(cell);
                std::getline(ss, cell, ',');
                rec.loss = std::stod(cell);
                std::getline(ss, cell, ',');
                rec.max_global_move = std::stod(cell);
                std::getline(ss, cell, ',');
                rec.total_move_fro = std::stod(cell);
                trace.per_round.push_back(rec);
            }
        }
        {
            std::ifstream lf(dir / "trace_local.csv");
            if (lf) {
                std::string line;
                std::getline(lf, line);
                while (std::getline(lf, line)) {
                    std::stringstream ss(line);
                    std::string cell;
                    local_record rec;
                    std::getline(ss, cell, ',');
                    rec.round = std::stoull(cell);
                    std::getline(ss, cell, ',');
                    rec.client = std::stoull(cell);
                    std::getline(ss, cell, ',');
                    rec.local_step = std::stoull(cell);
                    std::getline(ss, cell, ',');
                    rec.local_residual = std::stod(cell);
                    std::getline(ss, cell, ',');
                    rec.local_deviation = std::stod(cell);
                    std::getline(ss, cell, ',');
                    rec.max_move_from_init = std::stod(cell);
                    trace.per_local.push_back(rec);
                }
            }
        }
        if (trace.per_round.size() < 2) throw io_error("trace too short in " + dir.string());
        trace.rounds = trace.per_round.size() - 1;

        model_params probe =
            init(cfg.m, in.data.dim(), cfg.sigma, rng_stream(seed, stream_ids::init));
        gram_matrix h0 = gram_pair(in.data, probe.weights, probe.weights);
        spectrum_report spec = spectrum(h0);
        double eta_local = cfg.eta_local
                               ? *cfg.eta_local
                               : prescribed_rates(spec.lambda_min, spec.condition_number,
                                                  in.data.size(), cfg.local_steps, cfg.safety_c)
                                     .eta_local;
        trace.eta_local = eta_local;
        contraction factor = contraction_factor(spec.lambda_min, eta_local, cfg.eta_global,
                                                cfg.local_steps, cfg.clients);

        contraction_audit con = audit_contraction(trace, factor.factor);
        bool contraction_ok = con.pass_fraction >= 0.9;

        // Global movement straight from the round CSV. The per-(t,c,k) local
        // movement (from the round's broadcast weights) is not serialized, so
        // it stays a train-time audit.
        double res0 = std::sqrt(trace.per_round.front().residual_sq);
        double d_bound = 8.0 * std::sqrt(static_cast<double>(in.data.size())) * res0 /
                         (std::sqrt(static_cast<double>(cfg.m)) * spec.lambda_min);
        bool movement_ok = true;
        for (const auto& rec : trace.per_round)
            movement_ok = movement_ok && rec.max_global_move <= d_bound + 1e-10;

        bool deviation_ok = true;
        if (!trace.per_local.empty()) {
            auto dev = local_deviation_bounds(trace, eta_local, in.data.size(), cfg.local_steps);
            deviation_ok = all_hold(dev);
        }

        bool ok = contraction_ok && movement_ok && deviation_ok;
        passing += ok ? 1 : 0;
        top["verified_seeds"].push_back({{"seed", seed},
                                         {"contraction_pass_fraction", con.pass_fraction},
                                         {"contraction_ok", contraction_ok},
                                         {"global_movement_ok", movement_ok},
                                         {"deviation_ok", deviation_ok},
                                         {"ok", ok}});
    }
    top["passing"] = passing;
    top["total"] = seed_dirs.size();
    bool ok = seed_majority(passing, seed_dirs.size());
    top["pass_majority"] = ok;
    write_json(top, run_dir / "verify_summary.json");
    std::cout << "verify: " << passing << "/" << seed_dirs.size() << " seeds pass\n";
    return ok ? exit_ok : exit_divergence;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fl-ntk: federated NTK training simulator and bound checker"};
    app.require_subcommand(1);

    run_config cfg;
    std::string config_path, seed_list, n_list, m_list;
    bool no_audits = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value or JSON config file");
        sub->add_option("--out", cfg.out_dir, "output directory");
        sub->add_option("--data", cfg.data_dir, "directory with dataset.csv/partition.csv");
        sub->add_option("--seed", seed_list, "comma-separated seed list");
        sub->add_option("--record", cfg.record, "loss-only|bounds|full-states");
        sub->add_option("--n", cfg.n);
        sub->add_option("--d", cfg.d);
        sub->add_option("--m", cfg.m);
        sub->add_option("--N", cfg.clients);
        sub->add_option("--K", cfg.local_steps);
        sub->add_option_function<std::size_t>("--T",
                                              [&](const std::size_t& t) { cfg.rounds = t; });
        sub->add_option_function<double>("--eta-local",
                                         [&](const double& v) { cfg.eta_local = v; });
        sub->add_option("--eta-global", cfg.eta_global);
        sub->add_option("--safety-c", cfg.safety_c);
        sub->add_option("--sigma", cfg.sigma);
        sub->add_option("--eps", cfg.eps);
        sub->add_option("--delta", cfg.delta);
        sub->add_option("--partition", cfg.partition_mode, "iid or skewed:<alpha>");
        sub->add_option("--data-kind", cfg.data_kind);
        sub->add_option("--label-rule", cfg.label_rule_name);
        sub->add_option("--threads", cfg.threads);
        sub->add_option("--N-list", n_list, "comma-separated client counts (sweep)");
        sub->add_option("--m-list", m_list, "comma-separated widths (kernel sweep)");
        sub->add_flag("--gen-bound", cfg.gen_bound, "also compute the generalization bound");
        sub->add_flag("--no-audits", no_audits, "skip bound audits");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate dataset and partition files");
    CLI::App* kern = app.add_subcommand("kernel", "kernel matrices, spectra, concentration");
    CLI::App* tr = app.add_subcommand("train", "run federated training with audits");
    CLI::App* sweep = app.add_subcommand("sweep-clients", "rounds-to-eps across client counts");
    CLI::App* verify = app.add_subcommand("verify", "re-audit an existing run directory");
    for (CLI::App* sub : {gen, kern, tr, sweep, verify}) add_common(sub);

    // Config file first, then flags override: parse, load file, re-parse.
    try {
        app.parse(argc, argv);
        if (!config_path.empty()) {
            load_config_file(cfg, config_path);
            app.clear();
            app.parse(argc, argv);
        }
        if (!seed_list.empty()) cfg.seeds = parse_u64_list(seed_list);
        if (!n_list.empty()) cfg.client_sweep = parse_size_list(n_list);
        if (!m_list.empty()) cfg.width_sweep = parse_size_list(m_list);
        if (no_audits) cfg.audits = false;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    } catch (const io_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_io;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_usage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(cfg);
        if (kern->parsed()) return cmd_kernel(cfg);
        if (tr->parsed()) return cmd_train(cfg);
        if (sweep->parsed()) return cmd_sweep_clients(cfg);
        if (verify->parsed()) return cmd_verify(cfg);
        return exit_usage;
    } catch (const train_divergence_error& e) {
        std::cerr << "divergence: " << e.what() << '\n';
        return exit_divergence;
    } catch (const degenerate_spectrum_error& e) {
        std::cerr << "degenerate spectrum: " << e.what() << '\n';
        return exit_degenerate;
    } catch (const parameter_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_usage;
    } catch (const parse_error& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return exit_io;
    } catch (const io_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_io;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return exit_io;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    }
}
