// bsde-solve: batch front end for the solver, validation suites, convergence
// studies and the Gronwall table.
//
//   bsde-solve solve --preset spin-chain --out out/spin
//   bsde-solve validate --config configs/reaction-diffusion-1d.cfg
//   bsde-solve convergence-study --preset linear-martingale --paths 1000,10000
//   bsde-solve gronwall-check --a 1 --b 1 --alpha 0 --beta 1 --T 1
//
// Exit status: 0 success, 2 validation failure, 3 solver divergence, 1 other errors.

#include "bsde/errors.hpp"
#include "bsde/experiment.hpp"
#include "bsde/gronwall.hpp"
#include "bsde/io.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

constexpr int kValidationFailure = 2;
constexpr int kDivergence = 3;

struct Common {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config file (INI sections)");
    cmd->add_option("--preset", c.preset, "named preset: spin-chain, reaction-diffusion-1d, linear-martingale, "
                                          "linear-quadratic, linear-heat");
    cmd->add_option("--seed", c.seed, "root seed (overrides the config)");
    cmd->add_option("--out", c.out, "output directory");
}

bsde::ExperimentConfig resolve(const Common& c) {
    bsde::ExperimentConfig cfg;
    if (!c.config.empty()) cfg = bsde::load_config(c.config);
    else cfg = bsde::preset_config(c.preset.empty() ? "spin-chain" : c.preset);
    if (!c.config.empty() && !c.preset.empty() && c.preset != cfg.model.preset)
        throw bsde::ValidationError("config", "--preset " + c.preset + " conflicts with the config's preset " +
                                                  cfg.model.preset);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    return cfg;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (item.empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stod(item)));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo solver for semilinear backward stochastic evolution equations"};
    app.require_subcommand(1);

    Common solve_opts, validate_opts, study_opts;
    auto* solve = app.add_subcommand("solve", "solve one experiment and write report.json, solution.csv, snapshot/");
    add_common(solve, solve_opts);
    bool allow_unvalidated = false;
    solve->add_flag("--allow-unvalidated", allow_unvalidated, "run even when model validation fails");

    auto* validate = app.add_subcommand("validate", "run validation suites and write validation.json");
    add_common(validate, validate_opts);
    std::optional<std::string> suites;
    std::string inject;
    validate->add_option("--suites", suites, "comma-separated suites, 'all', or 'none' (an empty string also selects none)");
    validate->add_option("--inject", inject, "'anti-dissipative' replaces f0 in the dissipativity suite");

    auto* study = app.add_subcommand("convergence-study", "residual and contraction factors over (M, L) ladders");
    add_common(study, study_opts);
    std::string paths, steps;
    study->add_option("--paths", paths, "M ladder, comma separated");
    study->add_option("--steps", steps, "L ladder, comma separated");

    auto* gron = app.add_subcommand("gronwall-check", "table of (t, recursion limit, bound)");
    bsde::GronwallInput gin{1.0, 1.0, 0.0, 1.0, 1.0};
    std::size_t points = 21;
    gron->add_option("--a", gin.a);
    gron->add_option("--b", gin.b);
    gron->add_option("--alpha", gin.alpha);
    gron->add_option("--beta", gin.beta);
    gron->add_option("--T", gin.horizon);
    gron->add_option("--points", points);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*solve) {
            auto cfg = resolve(solve_opts);
            if (allow_unvalidated) cfg.solver.allow_unvalidated = true;
            const auto outcome = bsde::run_solve(cfg);
            const auto& r = outcome.result.report;
            std::cout << "solved " << cfg.model.preset << ": " << r.windows.size() << " windows, residual "
                      << bsde::format_number(r.residual) << ", max |Y|_H " << bsde::format_number(r.max_h_norm)
                      << " (C_1 " << bsde::format_number(r.c1) << "), output in " << cfg.out.string() << "\n";
            return 0;
        }
        if (*validate) {
            auto cfg = resolve(validate_opts);
            if (suites) {
                cfg.validate.suites.clear();
                std::istringstream in(*suites);
                std::string item;
                while (std::getline(in, item, ','))
                    if (!item.empty() && item != "none") cfg.validate.suites.push_back(item);
            }
            if (!inject.empty()) cfg.validate.inject = inject;
            const auto rep = bsde::run_validation(cfg);
            for (const auto& item : rep.items)
                std::cout << (item.pass ? "PASS " : "FAIL ") << item.suite << ": " << item.name << " = "
                          << bsde::format_number(item.value) << " (threshold " << bsde::format_number(item.threshold)
                          << ") " << item.detail << "\n";
            std::cout << (rep.all_pass() ? "all passed" : "validation failed") << " (" << rep.items.size()
                      << " items)\n";
            return rep.all_pass() ? 0 : kValidationFailure;
        }
        if (*study) {
            auto cfg = resolve(study_opts);
            auto m = paths.empty() ? cfg.study.paths : parse_sizes(paths);
            auto l = steps.empty() ? cfg.study.steps : parse_sizes(steps);
            std::cout << bsde::run_convergence_study(cfg, m, l);
            return 0;
        }
        if (*gron) {
            bsde::CsvWriter w(std::cout, "bsde-gronwall-csv", 1, {"t", "recursion", "bound"});
            for (const auto& row : bsde::gronwall_table(gin, points)) w.row(std::vector<double>{row.t, row.value, row.bound});
            return 0;
        }
    } catch (const bsde::ValidationError& e) {
        std::cerr << "validation failure [" << e.hypothesis() << "]: " << e.what() << "\n";
        return kValidationFailure;
    } catch (const bsde::Divergence& e) {
        std::cerr << "solver divergence: " << e.what() << "\n";
        return kDivergence;
    } catch (const bsde::WindowCollapse& e) {
        std::cerr << "solver divergence: " << e.what() << "\n";
        return kDivergence;
    } catch (const bsde::RadiusExceeded& e) {
        std::cerr << "solver divergence: " << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
