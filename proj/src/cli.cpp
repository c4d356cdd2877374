#include "fpgame/cli.hpp"

#include "fpgame/config.hpp"
#include "fpgame/entropy.hpp"
#include "fpgame/errors.hpp"
#include "fpgame/game.hpp"
#include "fpgame/hash.hpp"
#include "fpgame/io.hpp"
#include "fpgame/perturb.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <sstream>

namespace fpgame {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

json profile_json(const FeedbackProfile& p) {
    json out = json::array();
    for (const auto& L : p.gains()) out.push_back(matrix_json(L));
    return out;
}

json check_json(const ConditionCheck& c) {
    return {{"pass", c.pass}, {"margin", real_json(c.margin)}, {"detail", c.detail}};
}

class Session {
public:
    Session(const RunOptions& opts, std::ostream& log) : opts_(opts), log_(log), cfg_(load_config(opts.config_path)) {
        if (opts.seed) {
            if (cfg_.perturb) cfg_.perturb->paths.seed = *opts.seed;
            Fnv1a h;
            h.update(cfg_.hash);
            h.update(*opts.seed);
            cfg_.hash = h.digest();
        }
        out_dir_ = opts.out_dir ? *opts.out_dir : cfg_.base_dir / cfg_.output.directory;
        provenance_ = {cfg_.hash};
        const auto& f = cfg_.output.formats;
        csv_ = std::find(f.begin(), f.end(), "csv") != f.end();
        json_ = std::find(f.begin(), f.end(), "json") != f.end();
    }

    int dispatch() {
        const auto& s = opts_.subcommand;
        if (s == "ulam") return ulam();
        if (s == "stationary") return stationary();
        if (s == "entropy-trace") return entropy_trace();
        if (s == "equilibrium") return equilibrium();
        if (s == "perturb") return perturb();
        if (s == "resilience") return resilience();
        throw ConfigError("subcommand: unknown '" + s + "'");
    }

private:
    GameConfig base_game_config() const {
        std::vector<double> grid = cfg_.game ? cfg_.game->time_grid : std::vector<double>{cfg_.ulam.t_step};
        if (cfg_.game) return make_game_config(cfg_, opts_.threads);
        GameConfig g(cfg_.domain.partition, grid);
        g.samples_per_cell = cfg_.ulam.samples_per_cell(cfg_.system.dim());
        g.leak_tol = cfg_.domain.leak_tol;
        g.steps_per_unit_time = cfg_.ulam.steps_per_unit_time;
        g.stationary = cfg_.stationary;
        g.threads = opts_.threads;
        return g;
    }

    const GameBlock& game_block() const {
        if (!cfg_.game) throw ConfigError("game: block is required for '" + opts_.subcommand + "'");
        return *cfg_.game;
    }

    const PerturbBlock& perturb_block() const {
        if (!cfg_.perturb) throw ConfigError("perturb: block is required for '" + opts_.subcommand + "'");
        return *cfg_.perturb;
    }

    std::vector<DensityVector> densities(const GameConfig& g) const {
        std::vector<DensityVector> out{g.reference};
        for (const auto& d : g.extra_densities) out.push_back(d);
        return out;
    }

    json envelope() const {
        return {{"provenance", provenance_json(provenance_)}, {"subcommand", opts_.subcommand}};
    }

    void emit_csv(const std::string& name, const std::string& header, const std::vector<std::string>& rows) {
        if (!csv_) return;
        std::ostringstream os;
        os << provenance_line(provenance_) << '\n' << header << '\n';
        for (const auto& r : rows) os << r << '\n';
        write_text(out_dir_ / name, os.str());
    }

    void emit_density(const std::string& name, const DensityVector& d) {
        if (csv_) write_density(out_dir_ / name, d, provenance_);
    }

    void emit_json(const std::string& name, const json& doc) {
        if (json_) write_json(out_dir_ / name, doc);
    }

    int ulam() {
        const auto g = base_game_config();
        const auto P = transfer_operator(cfg_.system, cfg_.profile, cfg_.ulam.t_step, g);
        if (csv_) write_ulam(out_dir_ / "ulam.csv", P, provenance_);
        log_ << "ulam: " << P.size() << " cells, " << P.nonzeros() << " nonzeros, max leakage "
             << format_real(P.max_leakage()) << '\n';
        return kExitOk;
    }

    int stationary() {
        const auto g = base_game_config();
        const auto P = transfer_operator(cfg_.system, cfg_.profile, cfg_.ulam.t_step, g);
        const auto st = stationary_density(P, g.reference, cfg_.stationary);
        emit_density("stationary.csv", st.density);

        json grid = json::array();
        if (cfg_.game) {
            for (double t : cfg_.game->time_grid) {
                const auto Pt = transfer_operator(cfg_.system, cfg_.profile, t, g);
                grid.push_back({{"t", t}, {"residual", invariance_check(Pt, st.density)}});
            }
        }
        auto doc = envelope();
        doc["t_step"] = cfg_.ulam.t_step;
        doc["iterations"] = st.iterations;
        doc["residual"] = st.residual;
        doc["entropy"] = entropy(st.density).value;
        doc["grid_residuals"] = grid;
        emit_json("stationary.json", doc);
        log_ << "stationary: " << st.iterations << " iterations, residual " << format_real(st.residual) << '\n';
        return kExitOk;
    }

    double floor_value() const {
        if (!opts_.kl_floor) return 0.0;
        return cfg_.perturb ? cfg_.perturb->kl_floor : 1e-12;
    }

    int entropy_trace() {
        const auto& gb = game_block();
        const auto g = make_game_config(cfg_, opts_.threads);
        const auto dens = densities(g);
        const auto trace = entropy_decay_trace(cfg_.system, cfg_.profile, dens, gb.trace_grid, g, floor_value());
        for (const auto& w : trace.warnings) log_ << "warning: " << w << '\n';

        json per = json::array();
        for (std::size_t i = 0; i < dens.size(); ++i) {
            if (std::find(trace.skipped.begin(), trace.skipped.end(), i) != trace.skipped.end()) {
                per.push_back({{"density_id", i}, {"skipped", true}});
                continue;
            }
            std::vector<std::string> rows;
            for (const auto& r : trace.rows)
                if (r.density_index == i)
                    rows.push_back(format_real(r.t) + "," + format_real(r.entropy) + "," +
                                   format_real(r.relative_entropy));
            emit_csv("entropy_trace_" + std::to_string(i) + ".csv", "t,entropy,relative_entropy_to_stationary",
                     rows);
            const auto s = trace.series(i);
            per.push_back({{"density_id", i},
                           {"skipped", false},
                           {"non_increasing", trace.non_increasing(i, 1e-6)},
                           {"final", real_json(s.back())},
                           {"below_threshold", s.back() < gb.decay_threshold}});
        }
        auto doc = envelope();
        doc["kl_floor"] = floor_value();
        doc["stationary_entropy"] = entropy(trace.stationary).value;
        doc["decay_threshold"] = gb.decay_threshold;
        doc["densities"] = per;
        doc["warnings"] = trace.warnings;
        emit_json("entropy_trace.json", doc);
        emit_density("entropy_trace_stationary.csv", trace.stationary);
        log_ << "entropy-trace: " << dens.size() - trace.skipped.size() << " densities traced, "
             << trace.skipped.size() << " skipped\n";
        return kExitOk;
    }

    int equilibrium() {
        const auto& gb = game_block();
        const auto g = make_game_config(cfg_, opts_.threads);
        const auto result = find_equilibrium(cfg_.system, gb.space, g, gb.initial);

        auto doc = envelope();
        doc["converged"] = result.converged;
        doc["rounds"] = result.rounds;
        doc["choice"] = result.choice;
        doc["profile"] = profile_json(result.profile);
        doc["history"] = result.history;
        doc["time_grid"] = gb.time_grid;
        if (!result.converged) {
            emit_json("equilibrium.json", doc);
            throw NonConvergenceError("equilibrium: best-response iteration did not settle within " +
                                          std::to_string(gb.max_rounds) + " rounds",
                                      result.rounds, 0.0);
        }
        json criteria = json::array();
        std::vector<std::string> rows;
        for (std::size_t j = 0; j < result.per_channel_criteria.size(); ++j) {
            json row = json::array();
            for (std::size_t k = 0; k < gb.time_grid.size(); ++k) {
                row.push_back(real_json(result.per_channel_criteria[j][k]));
                rows.push_back(std::to_string(j) + "," + format_real(gb.time_grid[k]) + "," +
                               format_real(result.per_channel_criteria[j][k]));
            }
            criteria.push_back(row);
        }
        doc["criteria"] = criteria;
        doc["stationary_entropy"] = result.stationary_entropy;
        doc["stationary_residuals"] = result.stationary_residuals;
        doc["horizon_distance"] = result.horizon_distance;

        const auto report = verify_equilibrium(cfg_.system, result.profile, gb.space, g);
        json verification = json::array();
        for (const auto& d : report.densities)
            verification.push_back({{"density_id", d.density_index},
                                    {"no_deviation", check_json(d.no_deviation)},
                                    {"convergence", check_json(d.convergence)},
                                    {"entropy", check_json(d.entropy)}});
        doc["verification"] = {{"pass", report.pass()},
                               {"deviations_checked", report.deviations_checked},
                               {"deviations_rejected", report.deviations_rejected},
                               {"densities", verification}};
        emit_json("equilibrium.json", doc);
        emit_csv("criteria.csv", "channel,t,criterion", rows);
        emit_density("equilibrium_stationary.csv", *result.stationary);
        log_ << "equilibrium: converged in " << result.rounds << " rounds, verification "
             << (report.pass() ? "passed" : "failed") << '\n';
        return kExitOk;
    }

    int perturb() {
        const auto& pb = perturb_block();
        const auto g = base_game_config();
        const auto P = transfer_operator(cfg_.system, cfg_.profile, cfg_.ulam.t_step, g);
        const auto deterministic = stationary_density(P, g.reference, cfg_.stationary);

        std::vector<std::string> stats_rows;
        json per = json::array();
        for (std::size_t k = 0; k < pb.noise.epsilons.size(); ++k) {
            const double eps = pb.noise.epsilons[k];
            const auto stats =
                ensemble_statistics(cfg_.system, cfg_.profile, pb.noise.sigma, eps, pb.x0, pb.paths, opts_.threads);
            for (Eigen::Index c = 0; c < stats.mean.size(); ++c)
                stats_rows.push_back(format_real(eps) + "," + format_real(stats.t) + "," + std::to_string(c) + "," +
                                     format_real(stats.mean(c)) + "," + format_real(stats.covariance(c, c)));
            const auto Pe = build_stochastic_ulam(cfg_.domain.partition, cfg_.system, cfg_.profile, pb.noise.sigma,
                                                  eps, cfg_.ulam.t_step, pb.paths,
                                                  {cfg_.domain.leak_tol, opts_.threads});
            const auto st = perturbed_stationary(Pe, g.reference, cfg_.stationary);
            emit_density("perturbed_stationary_" + std::to_string(k) + ".csv", st.density);
            per.push_back({{"epsilon", eps},
                           {"stationary_iterations", st.iterations},
                           {"stationary_residual", st.residual},
                           {"l1_to_unperturbed_stationary", l1_distance(st.density, deterministic.density)},
                           {"max_leakage", Pe.max_leakage()}});
        }
        emit_csv("perturb_stats.csv", "epsilon,t,component,mean,variance", stats_rows);
        auto doc = envelope();
        doc["seed"] = pb.paths.seed;
        doc["epsilons"] = per;
        emit_json("perturb.json", doc);
        emit_density("unperturbed_stationary.csv", deterministic.density);
        log_ << "perturb: " << pb.noise.epsilons.size() << " noise levels\n";
        return kExitOk;
    }

    int resilience() {
        const auto& pb = perturb_block();
        const auto g = base_game_config();
        const std::vector<double> grid = g.time_grid;
        ResilienceConfig rc(cfg_.domain.partition, grid, pb.paths);
        rc.leak_tol = cfg_.domain.leak_tol;
        rc.kl_floor = floor_value();
        rc.threads = opts_.threads;
        const StrategySpace* space = nullptr;
        if (opts_.with_deviations) space = &game_block().space;
        const auto report = resilience_report(cfg_.system, cfg_.profile, pb.noise, rc, densities(g), space);

        std::vector<std::string> rows;
        for (const auto& e : report.entries)
            rows.push_back(format_real(e.epsilon) + "," + format_real(e.t) + "," + std::to_string(e.density_id) +
                           "," + format_real(e.l1_distance) + "," + format_real(e.rel_entropy) + "," +
                           format_real(e.violation_mass));
        emit_csv("resilience.csv", "epsilon,t,density_id,l1_distance,rel_entropy,support_violation_mass", rows);

        auto doc = envelope();
        doc["seed"] = pb.paths.seed;
        doc["kl_floor"] = rc.kl_floor;
        json theta = json::array();
        for (std::size_t k = 0; k < report.epsilons.size(); ++k)
            theta.push_back({{"epsilon", report.epsilons[k]}, {"theta_eps", real_json(report.theta_eps[k])}});
        doc["theta_eps"] = theta;
        doc["monotone_flag"] = report.monotone;
        std::size_t violations = 0;
        for (const auto& e : report.entries)
            if (e.violation_mass > 0.0 || e.rejected) ++violations;
        doc["entries_with_support_violation"] = violations;
        if (opts_.with_deviations) {
            json devs = json::array();
            for (const auto& d : report.deviations) {
                json th = json::array();
                for (double v : d.theta_eps) th.push_back(real_json(v));
                devs.push_back({{"channel", d.channel}, {"candidate", d.candidate}, {"rejected", d.rejected},
                                {"theta_eps", th}});
            }
            doc["deviations"] = devs;
        }
        emit_json("resilience.json", doc);
        log_ << "resilience: " << report.entries.size() << " entries, monotone " << std::boolalpha
             << report.monotone << '\n';
        return kExitOk;
    }

    const RunOptions& opts_;
    std::ostream& log_;
    ScenarioConfig cfg_;
    fs::path out_dir_;
    Provenance provenance_;
    bool csv_ = true;
    bool json_ = true;
};

}  // namespace

int run(const RunOptions& options, std::ostream& log, std::ostream& err) {
    try {
        if (options.threads < 1) throw ConfigError("--threads: must be >= 1");
        Session session(options, log);
        return session.dispatch();
    } catch (const ConfigError& e) {
        err << "validation error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const NumericalError& e) {
        err << "numerical rejection: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "validation error: " << e.what() << '\n';
        return kExitValidation;
    }
}

int main_entry(int argc, char** argv) {
    CLI::App app{"Transfer operators, entropy equilibria and resilience for multi-channel linear systems"};
    app.require_subcommand(1);
    RunOptions opts;
    std::string config, out;
    std::uint64_t seed = 0;

    const char* names[][2] = {
        {"ulam", "Build and export the Ulam transfer matrix at ulam.t_step"},
        {"stationary", "Solve for the stationary density and its fixed-point residuals"},
        {"entropy-trace", "Relative entropy to the stationary density over the time grid"},
        {"equilibrium", "Best-response equilibrium search and verification"},
        {"perturb", "SDE ensemble statistics and perturbed stationary densities"},
        {"resilience", "Perturbed vs unperturbed relative entropy report"},
    };
    for (const auto& [name, help] : names) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "Scenario JSON file")->required();
        sub->add_option("--out", out, "Output directory (overrides output.directory)");
        sub->add_option("--seed", seed, "Random seed (overrides perturb.seed)");
        sub->add_option("--threads", opts.threads, "Worker threads")->check(CLI::PositiveNumber);
        sub->add_flag("--kl-floor", opts.kl_floor, "Add perturb.kl_floor to reference densities in relative entropies");
        sub->add_flag("--with-deviations", opts.with_deviations, "Sweep unilateral deviations in resilience");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }
    for (auto* sub : app.get_subcommands()) opts.subcommand = sub->get_name();
    opts.config_path = config;
    if (!out.empty()) opts.out_dir = out;
    for (auto* sub : app.get_subcommands())
        if (sub->count("--seed") > 0) opts.seed = seed;
    return run(opts, std::cout, std::cerr);
}

}  // namespace fpgame
