// Command-line front end: solve scenarios to coherent flows, verify flows.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dta/parallel.hpp"
#include "dta/solver.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

// Exit codes: 0 success, 2 input/validation problem, 3 solver hard failure.
constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitSolverFailure = 3;

int exit_code_for(const dta::Error& err) {
    switch (err.code()) {
        case dta::errc::invalid_input:
        case dta::errc::schema:
        case dta::errc::validation:
        case dta::errc::nonnegativity:
        case dta::errc::out_of_range:
        case dta::errc::path_explosion:
        case dta::errc::model_precondition:
            return kExitInvalid;
        default:
            return kExitSolverFailure;
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dta::Error(dta::errc::invalid_input, "cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Re-target the scenario to a different horizon. Demand beyond a shortened
// horizon cannot influence the run, so it is clipped rather than rejected.
// Structural surprises are left for the scenario loader to diagnose.
void apply_horizon_override(json& doc, double horizon) {
    doc["horizon"] = horizon;
    if (!doc.contains("commodities") || !doc["commodities"].is_array()) return;
    for (auto& com : doc["commodities"]) {
        if (!com.is_object() || !com.contains("inflows") || !com["inflows"].is_array()) continue;
        for (auto& inflow : com["inflows"]) {
            if (!inflow.is_object() || !inflow.contains("pieces") ||
                !inflow["pieces"].is_array()) {
                continue;
            }
            json kept = json::array();
            for (const auto& p : inflow["pieces"]) {
                if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number()) {
                    kept.push_back(p);
                    continue;
                }
                const double begin = p[0].get<double>();
                const double end = p[1].get<double>();
                if (begin >= horizon) continue;
                kept.push_back(json::array({begin, std::min(end, horizon), p[2]}));
            }
            inflow["pieces"] = std::move(kept);
        }
    }
}

json finite_or_tag(double x) {
    if (std::isfinite(x)) return json(x);
    return json(x > 0 ? "inf" : "-inf");
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

struct SolveOptions {
    std::string scenario;
    std::string out_dir;
    std::string model = "vickrey";
    double phys_step = 0.0;
    std::string predictor = "constant";
    std::string routing = "dpe";
    std::string noise = "none";
    int mc_samples = 20000;
    std::uint64_t seed = 0;
    std::string tie_policy = "sticky";
    double horizon = -1.0; // <0: keep the scenario's
    double alpha0 = 0.5;
    double alpha_min = 0.015625;
    double fp_tol = 1e-6;
    double routing_step = 0.015625;
    int max_iter = 100;
};

json flow_to_json(const dta::Flow& flow, double horizon) {
    json doc;
    doc["edges"] = flow.edge_count();
    doc["commodities"] = flow.commodity_count();
    doc["horizon"] = horizon;
    auto dump_side = [&](bool inflow_side) {
        json arr = json::array();
        for (int e = 0; e < flow.edge_count(); ++e) {
            for (int i = 0; i < flow.commodity_count(); ++i) {
                const dta::RateFunction& f =
                    inflow_side ? flow.inflow(e, i) : flow.outflow(e, i);
                if (f.is_zero()) continue;
                json rec;
                rec["edge"] = e;
                rec["commodity"] = i;
                json pieces = json::array();
                for (const auto& p : f.pieces()) {
                    pieces.push_back(json::array({p.begin, p.end, p.value}));
                }
                rec["pieces"] = std::move(pieces);
                arr.push_back(std::move(rec));
            }
        }
        return arr;
    };
    doc["inflows"] = dump_side(true);
    doc["outflows"] = dump_side(false);
    return doc;
}

dta::Flow flow_from_json(const json& doc, const dta::Network& net) {
    if (!doc.is_object() || !doc.contains("edges") || !doc.contains("commodities")) {
        throw dta::Error(dta::errc::schema, "flow document must carry 'edges' and 'commodities'");
    }
    const int edges = doc.at("edges").get<int>();
    const int commodities = doc.at("commodities").get<int>();
    if (edges != net.edge_count() || commodities != net.commodity_count()) {
        throw dta::Error(dta::errc::validation,
                         "flow dimensions (" + std::to_string(edges) + " edges, " +
                             std::to_string(commodities) +
                             " commodities) do not match the scenario (" +
                             std::to_string(net.edge_count()) + ", " +
                             std::to_string(net.commodity_count()) + ")");
    }
    dta::Flow flow(edges, commodities);
    auto read_side = [&](const char* key, bool inflow_side) {
        if (!doc.contains(key)) return;
        for (const auto& rec : doc.at(key)) {
            const int e = rec.at("edge").get<int>();
            const int i = rec.at("commodity").get<int>();
            if (e < 0 || e >= edges || i < 0 || i >= commodities) {
                throw dta::Error(dta::errc::validation,
                                 "flow record addresses edge " + std::to_string(e) +
                                     ", commodity " + std::to_string(i) +
                                     ", which is outside the scenario's dimensions");
            }
            std::vector<dta::RateFunction::Piece> pieces;
            for (const auto& p : rec.at("pieces")) {
                pieces.push_back({p.at(0).get<double>(), p.at(1).get<double>(),
                                  p.at(2).get<double>()});
            }
            (inflow_side ? flow.inflow(e, i) : flow.outflow(e, i)) =
                dta::RateFunction::from_pieces(pieces);
        }
    };
    read_side("inflows", true);
    read_side("outflows", false);
    return flow;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw dta::Error(dta::errc::invalid_input, "cannot write '" + path.string() + "'");
}

std::string splits_csv(const dta::SolveResult& res) {
    std::string csv = "theta,node,commodity,edge,fraction\n";
    for (const auto& sched : res.splits) {
        for (std::size_t k = 0; k < sched.cell_starts.size(); ++k) {
            for (const auto& [e, r] : sched.fractions[k]) {
                csv += fmt(sched.cell_starts[k]);
                csv += ',';
                csv += std::to_string(sched.v);
                csv += ',';
                csv += std::to_string(sched.i);
                csv += ',';
                csv += std::to_string(e);
                csv += ',';
                csv += fmt(r);
                csv += '\n';
            }
        }
    }
    return csv;
}

std::string queues_csv(const dta::EdgeState& state) {
    std::string csv = "theta,edge,backlog\n";
    for (std::size_t e = 0; e < state.backlog.size(); ++e) {
        const auto& z = state.backlog[e];
        for (std::size_t k = 0; k < z.times().size(); ++k) {
            csv += fmt(z.times()[k]);
            csv += ',';
            csv += std::to_string(e);
            csv += ',';
            csv += fmt(z.values()[k]);
            csv += '\n';
        }
    }
    return csv;
}

json diagnostics_json(const dta::SolveResult& res) {
    json d;
    d["converged"] = res.converged;
    d["reached"] = res.reached;
    d["failure"] = res.failure;
    d["total_iterations"] = res.total_iterations;
    d["closure_sweeps"] = res.closure_sweeps;
    d["total_inflow_mass"] = res.total_inflow_mass;
    d["max_conservation_per_unit"] = res.max_conservation_per_unit;
    d["max_consistency_per_unit"] = res.max_consistency_per_unit;
    d["dpe_gap"] = finite_or_tag(res.dpe_gap_value);
    if (res.has_spe_gap) {
        json s;
        s["gap"] = res.spe.gap;
        s["budget"] = res.spe.budget;
        s["worst_violation"] = res.spe.worst_violation;
        s["max_std_error"] = res.spe.max_std_error;
        d["spe_gap"] = std::move(s);
    } else {
        d["spe_gap"] = nullptr;
    }
    d["conservation"] = res.conservation;
    d["consistency"] = res.consistency;
    json windows = json::array();
    for (const auto& w : res.windows) {
        json rec;
        rec["start"] = w.start;
        rec["end"] = w.end;
        rec["alpha"] = w.alpha;
        rec["iterations"] = w.iterations;
        rec["residual"] = finite_or_tag(w.residual);
        rec["accepted"] = w.accepted;
        rec["stalled"] = w.stalled;
        rec["monotone_after_threshold"] = w.monotone_after_threshold;
        windows.push_back(std::move(rec));
    }
    d["windows"] = std::move(windows);
    return d;
}

json config_echo(const SolveOptions& opt) {
    json c;
    c["model"] = opt.model;
    c["phys_step"] = opt.phys_step;
    c["predictor"] = opt.predictor;
    c["routing"] = opt.routing;
    c["noise"] = opt.noise;
    c["mc_samples"] = opt.mc_samples;
    c["seed"] = opt.seed;
    c["tie_policy"] = opt.tie_policy;
    c["horizon_override"] = opt.horizon >= 0.0 ? json(opt.horizon) : json(nullptr);
    c["alpha0"] = opt.alpha0;
    c["alpha_min"] = opt.alpha_min;
    c["fp_tol"] = opt.fp_tol;
    c["routing_step"] = opt.routing_step;
    c["max_iter"] = opt.max_iter;
    return c;
}

int run_solve(const SolveOptions& opt) {
    namespace fs = std::filesystem;
    const auto t_start = std::chrono::steady_clock::now();

    json doc;
    dta::Network net;
    try {
        doc = dta::parse_json_text(read_file(opt.scenario));
        if (opt.horizon >= 0.0) apply_horizon_override(doc, opt.horizon);
        net = dta::load_network(doc);
    } catch (const dta::Error& err) {
        std::cerr << "error (" << dta::errc_name(err.code()) << "): " << err.what() << "\n";
        return kExitInvalid;
    }

    dta::SolverConfig cfg;
    cfg.routing = opt.routing;
    cfg.predictor = opt.predictor;
    cfg.loading_model = opt.model;
    cfg.phys_step = opt.phys_step;
    cfg.mc_samples = opt.mc_samples;
    cfg.seed = opt.seed;
    cfg.alpha0 = opt.alpha0;
    cfg.alpha_min = opt.alpha_min;
    cfg.tol_fp = opt.fp_tol;
    cfg.routing_step = opt.routing_step;
    cfg.max_iter = opt.max_iter;
    try {
        cfg.noise = dta::NoiseModel::parse(opt.noise);
        cfg.tie_policy = dta::parse_tie_policy(opt.tie_policy);
        cfg.validate();
        (void)dta::parse_predictor(opt.predictor);
        const auto model = dta::make_loading_model(opt.model, opt.phys_step);
        if (!model->metadata(net).is_uniformly_strictly_causal) {
            std::cerr << "warning: some edge has zero free-flow time; the window iteration "
                         "loses its contraction guarantee and convergence is best-effort\n";
        }
    } catch (const dta::Error& err) {
        std::cerr << "error (" << dta::errc_name(err.code()) << "): " << err.what() << "\n";
        return kExitInvalid;
    }

    const auto t_loaded = std::chrono::steady_clock::now();

    dta::SolveResult res;
    std::string hard_failure;
    try {
        res = dta::solve(net, cfg);
    } catch (const dta::Error& err) {
        const int code = exit_code_for(err);
        std::cerr << "error (" << dta::errc_name(err.code()) << "): " << err.what() << "\n";
        if (code == kExitInvalid) return kExitInvalid;
        hard_failure = std::string(dta::errc_name(err.code())) + ": " + err.what();
        res = dta::SolveResult{};
        res.failure = hard_failure;
        res.flow = dta::Flow(net.edge_count(), net.commodity_count());
        res.state = dta::make_loading_model(cfg.loading_model, cfg.phys_step)
                        ->load(net, res.flow, net.horizon())
                        .state;
    }
    const auto t_solved = std::chrono::steady_clock::now();

    try {
        fs::create_directories(opt.out_dir);
        const fs::path dir(opt.out_dir);
        write_text(dir / "flow.json",
                   flow_to_json(res.flow, res.converged ? net.horizon() : res.reached).dump(2) +
                       "\n");
        write_text(dir / "splits.csv", splits_csv(res));
        write_text(dir / "queues.csv", queues_csv(res.state));
        write_text(dir / "diagnostics.json", diagnostics_json(res).dump(2) + "\n");

        const auto t_written = std::chrono::steady_clock::now();
        auto ms = [](auto a, auto b) {
            return std::chrono::duration<double, std::milli>(b - a).count();
        };
        json manifest;
        manifest["command"] = "solve";
        manifest["scenario"] = opt.scenario;
        manifest["config"] = config_echo(opt);
        manifest["outputs"] = {"flow.json", "splits.csv", "queues.csv", "diagnostics.json"};
        const char* threads = std::getenv("DTA_THREADS");
        manifest["threads"] = threads != nullptr ? json(std::string(threads)) : json(nullptr);
        json timings;
        timings["load_ms"] = ms(t_start, t_loaded);
        timings["solve_ms"] = ms(t_loaded, t_solved);
        timings["write_ms"] = ms(t_solved, t_written);
        manifest["timings"] = std::move(timings);
        write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitInvalid;
    }

    if (!res.converged) {
        if (hard_failure.empty()) {
            std::cerr << "solver failure: " << res.failure << " (reached t=" << res.reached
                      << "; partial outputs written to " << opt.out_dir << ")\n";
        }
        return kExitSolverFailure;
    }
    std::cout << "converged over [0, " << net.horizon() << "] in " << res.total_iterations
              << " iterations; best-response gap " << res.dpe_gap_value << "; outputs in "
              << opt.out_dir << "\n";
    return kExitOk;
}

int run_verify(const std::string& scenario_path, const std::string& flow_path,
               const std::string& model_name, double phys_step, double horizon_override) {
    dta::Network net;
    dta::Flow flow;
    std::shared_ptr<const dta::LoadingModel> model;
    try {
        json doc = dta::parse_json_text(read_file(scenario_path));
        if (horizon_override >= 0.0) apply_horizon_override(doc, horizon_override);
        net = dta::load_network(doc);
        model = dta::make_loading_model(model_name, phys_step);
        const json fdoc = dta::parse_json_text(read_file(flow_path));
        flow = flow_from_json(fdoc, net);
        if (fdoc.contains("horizon")) {
            const double h = fdoc.at("horizon").get<double>();
            if (std::abs(h - net.horizon()) > 1e-9) {
                throw dta::Error(dta::errc::validation,
                                 "flow horizon " + std::to_string(h) +
                                     " does not match the scenario horizon " +
                                     std::to_string(net.horizon()) +
                                     " (use --horizon to align them)");
            }
        }
    } catch (const dta::Error& err) {
        std::cerr << "error (" << dta::errc_name(err.code()) << "): " << err.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitInvalid;
    }

    try {
        const double T = net.horizon();
        const auto conservation = dta::conservation_residual(net, flow, T);
        const auto consistency = dta::consistency_residual(net, flow, *model, T);
        const dta::EdgeState state = model->load(net, flow, T).state;
        const double gap = dta::dpe_gap(net, flow, state);

        double cons_total = 0.0, cons_max = 0.0;
        for (const auto& row : conservation) {
            for (double x : row) {
                cons_total += x;
                cons_max = std::max(cons_max, x / T);
            }
        }
        double consis_total = 0.0, consis_max = 0.0;
        for (const auto& row : consistency) {
            for (double x : row) {
                consis_total += x;
                consis_max = std::max(consis_max, x / T);
            }
        }
        double mass = 0.0;
        for (int i = 0; i < net.commodity_count(); ++i) {
            for (const auto& [v, u] : net.commodity(i).inflows) {
                (void)v;
                mass += u.total_mass();
            }
        }

        json report;
        report["conservation_total"] = cons_total;
        report["max_conservation_per_unit"] = cons_max;
        report["consistency_total"] = consis_total;
        report["max_consistency_per_unit"] = consis_max;
        report["dpe_gap"] = finite_or_tag(gap);
        report["total_inflow_mass"] = mass;
        report["conservation"] = conservation;
        report["consistency"] = consistency;
        std::cout << report.dump(2) << "\n";
        return kExitOk;
    } catch (const dta::Error& err) {
        std::cerr << "error (" << dta::errc_name(err.code()) << "): " << err.what() << "\n";
        return exit_code_for(err);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic traffic assignment: coherent flows under recursive route choice"};
    app.require_subcommand(1);

    SolveOptions opt;
    CLI::App* solve_cmd = app.add_subcommand("solve", "compute a coherent flow for a scenario");
    solve_cmd->add_option("scenario", opt.scenario, "scenario JSON file")->required();
    solve_cmd->add_option("--out", opt.out_dir, "output directory")->required();
    solve_cmd->add_option("--model", opt.model, "loading model: vickrey | linear-delay");
    solve_cmd->add_option("--phys-step", opt.phys_step, "linear-delay grid step (0 = auto)");
    solve_cmd->add_option("--predictor", opt.predictor,
                          "constant | perfect | composite:<cutoff>");
    solve_cmd->add_option("--routing", opt.routing, "dpe | spe | stochastic-ide");
    solve_cmd->add_option("--noise", opt.noise, "gaussian:<sigma> | uniform:<a>,<b> | none");
    solve_cmd->add_option("--mc-samples", opt.mc_samples, "perception-noise sample count");
    solve_cmd->add_option("--seed", opt.seed, "random seed for perception noise");
    solve_cmd->add_option("--tie-policy", opt.tie_policy, "uniform | sticky");
    solve_cmd->add_option("--horizon", opt.horizon, "override the scenario horizon");
    solve_cmd->add_option("--alpha0", opt.alpha0, "initial window length");
    solve_cmd->add_option("--alpha-min", opt.alpha_min, "window length floor");
    solve_cmd->add_option("--fp-tol", opt.fp_tol, "fixed-point residual tolerance");
    solve_cmd->add_option("--routing-step", opt.routing_step, "split evaluation grid step");
    solve_cmd->add_option("--max-iter", opt.max_iter, "iteration cap per window");

    std::string verify_scenario, verify_flow;
    std::string verify_model = "vickrey";
    double verify_phys_step = 0.0;
    double verify_horizon = -1.0;
    CLI::App* verify_cmd =
        app.add_subcommand("verify", "recompute residuals and gaps for a stored flow");
    verify_cmd->add_option("scenario", verify_scenario, "scenario JSON file")->required();
    verify_cmd->add_option("flow", verify_flow, "flow JSON file")->required();
    verify_cmd->add_option("--model", verify_model, "loading model: vickrey | linear-delay");
    verify_cmd->add_option("--phys-step", verify_phys_step, "linear-delay grid step (0 = auto)");
    verify_cmd->add_option("--horizon", verify_horizon, "override the scenario horizon");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    if (solve_cmd->parsed()) return run_solve(opt);
    return run_verify(verify_scenario, verify_flow, verify_model, verify_phys_step,
                      verify_horizon);
}
