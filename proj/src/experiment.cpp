#include "bsde/experiment.hpp"

#include "bsde/errors.hpp"
#include "bsde/gronwall.hpp"
#include "bsde/kernels.hpp"
#include "bsde/stochastic_driver.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace bsde {

namespace pt = boost::property_tree;

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) {
        std::istringstream in(item);
        double v;
        if (!(in >> v)) throw ValidationError("config", "not a number: '" + item + "'");
        out.push_back(static_cast<T>(v));
    }
    return out;
}

template <class T>
void read(const pt::ptree& tree, const char* key, T& into) {
    if (auto v = tree.get_optional<T>(key)) into = *v;
}

void read_size(const pt::ptree& tree, const char* key, std::size_t& into) {
    if (auto v = tree.get_optional<double>(key)) {
        if (*v < 0 || std::floor(*v) != *v) throw ValidationError("config", std::string(key) + " must be a nonnegative integer");
        into = static_cast<std::size_t>(*v);
    }
}

RegressionBasis basis_for(const ExperimentConfig& c, std::size_t noise) {
    RegressionBasis b;
    b.degree = c.discretization.basis_degree;
    b.coordinates = c.discretization.basis_coordinates ? c.discretization.basis_coordinates : noise;
    b.ridge = c.discretization.ridge;
    return b;
}

double worst(const std::vector<double>& v) {
    double w = 0.0;
    for (double x : v) w = std::max(w, x);
    return w;
}

const std::vector<std::string>& all_suites() {
    static const std::vector<std::string> s{"dissipativity", "growth-lipschitz", "smoothing", "interpolation",
                                            "gronwall",      "conditional-expectation"};
    return s;
}

}  // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"spin-chain", "reaction-diffusion-1d", "linear-martingale",
                                                "linear-quadratic", "linear-heat"};
    return names;
}

ExperimentConfig preset_config(const std::string& name) {
    ExperimentConfig c;
    c.model.preset = name;
    c.seed = 1;
    auto& d = c.discretization;
    if (name == "spin-chain") {
        d.steps = 100;
        d.paths = 10000;
    } else if (name == "reaction-diffusion-1d") {
        d.steps = 50;
        d.paths = 4000;
    } else if (name == "linear-martingale" || name == "linear-quadratic") {
        d.steps = 100;
        d.paths = 100000;
    } else if (name == "linear-heat") {
        d.steps = 100;
        d.paths = 1000;
    } else {
        throw ValidationError("config", "unknown preset '" + name + "'");
    }
    c.out = "out/" + name;
    c.validate.suites = {"all"};
    return c;
}

ExperimentConfig parse_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ValidationError("config", e.what());
    }
    const std::string preset = tree.get<std::string>("model.preset", "spin-chain");
    ExperimentConfig c = preset_config(preset);
    c.seed.reset();
    c.validate.suites.clear();
    c.source = text;
    try {
        auto& m = c.model;
        read(tree, "model.horizon", m.horizon);
        read_size(tree, "model.half_width", m.spin.half_width);
        read(tree, "model.k", m.spin.k);
        if (auto v = tree.get_optional<std::string>("model.coefficients")) m.spin.coefficients = parse_list<double>(*v);
        read(tree, "model.terminal_offset", m.spin.terminal_offset);
        read(tree, "model.terminal_amplitude", m.spin.terminal_amplitude);
        if (tree.get_optional<std::string>("model.modes")) {
            read_size(tree, "model.modes", m.diffusion.modes);
            m.heat_modes = m.diffusion.modes;
        }
        read(tree, "model.alpha", m.diffusion.alpha);
        if (auto v = tree.get_optional<std::string>("model.r")) m.diffusion.r_coefficients = parse_list<double>(*v);
        read(tree, "model.K1", m.diffusion.driver_K1);
        read(tree, "model.terminal_scale", m.diffusion.terminal_scale);
        read(tree, "model.terminal_rho", m.diffusion.terminal_rho);
        read(tree, "model.deterministic_terminal", m.diffusion.deterministic_terminal);

        auto& d = c.discretization;
        read_size(tree, "discretization.steps", d.steps);
        read_size(tree, "discretization.paths", d.paths);
        read_size(tree, "discretization.noise", d.noise);
        read(tree, "discretization.basis_degree", d.basis_degree);
        read_size(tree, "discretization.basis_coordinates", d.basis_coordinates);
        read(tree, "discretization.ridge", d.ridge);

        auto& s = c.solver;
        read(tree, "solver.tol", s.tol);
        read(tree, "solver.max_iter", s.max_iter);
        read(tree, "solver.min_iter", s.min_iter);
        read(tree, "solver.safety", s.safety);
        if (auto v = tree.get_optional<double>("solver.window")) s.window_override = *v;
        read(tree, "solver.auto_shift", s.auto_shift);
        read(tree, "solver.allow_unvalidated", s.allow_unvalidated);
        read(tree, "solver.max_outer", s.max_outer);
        read(tree, "solver.tol_outer", s.tol_outer);
        read(tree, "solver.tol_inner", s.tol_inner);
        if (auto v = tree.get_optional<std::string>("solver.initial_guess")) {
            if (*v == "zero") s.initial_guess = SolverConfig::InitialGuess::zero;
            else if (*v == "propagated") s.initial_guess = SolverConfig::InitialGuess::propagated;
            else throw ValidationError("config", "initial_guess must be 'zero' or 'propagated'");
        }
        if (auto v = tree.get_optional<std::string>("solver.mode")) {
            if (*v == "auto") c.mode = SolveMode::automatic;
            else if (*v == "simplified") c.mode = SolveMode::simplified;
            else if (*v == "general") c.mode = SolveMode::general;
            else throw ValidationError("config", "mode must be auto, simplified or general");
        }

        if (auto v = tree.get_optional<std::string>("run.seed")) {
            std::istringstream sin(*v);
            std::uint64_t seed = 0;
            if (v->find('-') != std::string::npos || !(sin >> seed) || !sin.eof()) throw ValidationError("config", "seed must be a nonnegative integer");
            c.seed = seed;
        }
        if (auto v = tree.get_optional<std::string>("run.out")) c.out = *v;

        if (auto v = tree.get_optional<std::string>("validate.suites")) {
            c.validate.suites = split_list(*v);
            std::erase(c.validate.suites, std::string("none"));
        }
        read_size(tree, "validate.trials", c.validate.trials);
        read(tree, "validate.inject", c.validate.inject);

        if (auto v = tree.get_optional<std::string>("study.paths")) c.study.paths = parse_list<std::size_t>(*v);
        if (auto v = tree.get_optional<std::string>("study.steps")) c.study.steps = parse_list<std::size_t>(*v);
    } catch (const pt::ptree_bad_data& e) {
        throw ValidationError("config", e.what());
    }
    c.model.spin.horizon = c.model.horizon;
    c.model.diffusion.horizon = c.model.horizon;
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config", "cannot read " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

void check_config(const ExperimentConfig& c) {
    const auto& names = preset_names();
    if (std::find(names.begin(), names.end(), c.model.preset) == names.end())
        throw ValidationError("config", "unknown preset '" + c.model.preset + "'");
    if (!c.seed) throw ValidationError("config", "[run] seed is required");
    if (c.discretization.steps == 0 || c.discretization.paths < 2)
        throw ValidationError("config", "need steps >= 1 and paths >= 2");
    if (c.discretization.basis_degree < 0) throw ValidationError("config", "basis_degree must be >= 0");
    for (const auto& s : c.validate.suites)
        if (s != "all" && std::find(all_suites().begin(), all_suites().end(), s) == all_suites().end())
            throw ValidationError("config", "unknown validation suite '" + s + "'");
}

BsdeProblem build_problem(const ModelConfig& m) {
    if (m.preset == "spin-chain") {
        SpinSpec s = m.spin;
        s.horizon = m.horizon;
        return build_spin_system(s);
    }
    if (m.preset == "reaction-diffusion-1d") {
        ReactionDiffusionSpec s = m.diffusion;
        s.horizon = m.horizon;
        return build_reaction_diffusion(s);
    }
    if (m.preset == "linear-martingale") return build_linear_oracle(LinearOracle::martingale, m.horizon);
    if (m.preset == "linear-quadratic") return build_linear_oracle(LinearOracle::quadratic, m.horizon);
    if (m.preset == "linear-heat") return build_linear_oracle(LinearOracle::heat, m.horizon, m.heat_modes);
    throw ValidationError("config", "unknown preset '" + m.preset + "'");
}

namespace {

struct Prepared {
    BsdeProblem problem;
    ValidationReport validation;
};

Prepared prepare(const ExperimentConfig& c) {
    check_config(c);
    Prepared p{build_problem(c.model), {}};
    p.validation = validate_problem(p.problem);
    if (!p.validation.all_pass() && !c.solver.allow_unvalidated) {
        for (const auto& item : p.validation.items)
            if (!item.pass) throw ValidationError(item.name, item.detail + " (value " + format_number(item.value) + ")");
    }
    return p;
}

SolveResult solve_prepared(const ExperimentConfig& c, BsdeProblem problem, std::size_t paths, std::size_t steps,
                           std::unique_ptr<BsdeSolver>* keep = nullptr) {
    const std::size_t noise = c.discretization.noise ? c.discretization.noise : problem.noise_dim;
    const auto ens = sample_ensemble(TimeGrid::uniform(problem.horizon, steps), noise, paths, *c.seed);
    SolverConfig sc = c.solver;
    sc.allow_unvalidated = true;  // validation already ran in prepare()
    auto solver = std::make_unique<BsdeSolver>(std::move(problem), ens, basis_for(c, noise), sc);
    bool general = c.mode == SolveMode::general ||
                   (c.mode == SolveMode::automatic && !solver->problem().f1.zero() &&
                    solver->problem().f1.lipschitz_K > 0.0);
    SolveResult r = general ? solver->general_solve() : solver->global_solve();
    if (keep) *keep = std::move(solver);
    return r;
}

}  // namespace

SolveResult solve_once(const ExperimentConfig& config, std::size_t paths, std::size_t steps) {
    Prepared p = prepare(config);
    return solve_prepared(config, std::move(p.problem), paths, steps);
}

SolveOutcome run_solve(const ExperimentConfig& c, bool write_files) {
    Prepared prep = prepare(c);
    SolveOutcome out;
    out.validation = prep.validation;
    std::unique_ptr<BsdeSolver> solver;
    out.result = solve_prepared(c, std::move(prep.problem), c.discretization.paths, c.discretization.steps, &solver);

    const auto& sol = out.result.solution;
    const auto& rep = out.result.report;
    const std::size_t L = sol.grid.steps();
    const std::size_t M = sol.Y.paths();
    const double T = sol.grid.horizon();
    const double alpha = solver->problem().alpha;
    std::ostringstream csv;
    {
        CsvWriter w(csv, "bsde-solve-csv", 1,
                    {"t", "mean_h_norm", "max_h_norm", "c1_bound", "max_theta_norm", "blowup_bound"});
        State y(sol.Y.dim());
        for (std::size_t l = 0; l <= L; ++l) {
            double mean = 0.0, top = 0.0;
            for (std::size_t m = 0; m < M; ++m) {
                sol.Y.gather(l, m, y);
                const double h = h_norm(y);
                mean += h;
                top = std::max(top, h);
            }
            const double t = sol.grid[l];
            const double envelope = l < L ? blowup_bound(rep.c2, rep.theta, alpha, T, t)
                                          : (rep.theta == alpha ? rep.c2 : std::numeric_limits<double>::infinity());
            w.row(std::vector<double>{t, mean / double(M), top, rep.c1, solver->max_theta_norm(sol.Y, l), envelope});
        }
    }
    out.csv = csv.str();

    Json report;
    report["config"] = {{"preset", c.model.preset},
                        {"seed", *c.seed},
                        {"paths", c.discretization.paths},
                        {"steps", c.discretization.steps},
                        {"source", c.source}};
    Json val = Json::array();
    for (const auto& item : out.validation.items)
        val.push_back({{"name", item.name}, {"pass", item.pass}, {"value", number(item.value)},
                       {"threshold", number(item.threshold)}, {"detail", item.detail}});
    report["validation"] = val;
    report["solver"] = to_json(rep);
    out.report = report;

    if (write_files) {
        write_text(c.out / "solution.csv", out.csv);
        write_text(c.out / "report.json", report.dump(2) + "\n");
        save_solution(c.out / "snapshot", sol, Json{{"preset", c.model.preset}, {"seed", *c.seed}});
    }
    return out;
}

std::string run_convergence_study(const ExperimentConfig& c, const std::vector<std::size_t>& paths,
                                  const std::vector<std::size_t>& steps, bool write_files) {
    if (paths.empty() || steps.empty()) throw ValidationError("config", "convergence ladders must be nonempty");
    Prepared prep = prepare(c);
    std::ostringstream csv;
    CsvWriter w(csv, "bsde-convergence-csv", 1, {"paths", "steps", "residual", "picard_factor", "outer_factor"});
    for (std::size_t L : steps)
        for (std::size_t M : paths) {
            SolveResult r = solve_prepared(c, prep.problem, M, L);
            double picard = 0.0;
            for (const auto& win : r.report.windows) picard = std::max(picard, worst(win.factors));
            w.row(std::vector<double>{double(M), double(L), r.report.residual, picard, worst(r.report.outer_factors)});
        }
    if (write_files) write_text(c.out / "convergence.csv", csv.str());
    return csv.str();
}

bool SuiteReport::all_pass() const {
    return std::all_of(items.begin(), items.end(), [](const SuiteItem& i) { return i.pass; });
}

Json SuiteReport::to_json() const {
    Json items_json = Json::array();
    for (const auto& i : items)
        items_json.push_back({{"suite", i.suite}, {"name", i.name}, {"pass", i.pass}, {"value", number(i.value)},
                              {"threshold", number(i.threshold)}, {"detail", i.detail}});
    return Json{{"pass", all_pass()}, {"items", items_json}};
}

SuiteReport run_validation(const ExperimentConfig& c, bool write_files) {
    check_config(c);
    std::vector<std::string> suites;
    for (const auto& s : c.validate.suites) {
        if (s == "all") suites = all_suites();
        else if (std::find(suites.begin(), suites.end(), s) == suites.end()) suites.push_back(s);
    }
    SuiteReport rep;
    if (suites.empty()) {
        if (write_files) write_text(c.out / "validation.json", rep.to_json().dump(2) + "\n");
        return rep;
    }
    BsdeProblem problem = build_problem(c.model);
    const std::size_t N = problem.dim();
    const std::uint64_t seed = *c.seed;
    const auto& op = problem.op;
    const bool spin = c.model.preset == "spin-chain";

    for (const auto& suite : suites) {
        if (suite == "dissipativity") {
            DriftFn f0 = problem.f0.eval;
            std::string what = "model f0";
            if (c.validate.inject == "anti-dissipative") {
                f0 = anti_dissipative_drift();
                what = "injected anti-dissipative f0";
            } else if (problem.f0.mu > 0.0) {
                f0 = exponential_shift(problem, problem.f0.mu).f0.eval;
                what = "mu-shifted f0";
            }
            if (!f0) {
                rep.items.push_back({suite, "max inner product", true, 0.0, 1e-12, "f0 = 0"});
                continue;
            }
            const auto d = check_dissipativity(f0, spin ? boundary_matched_pairs(N, 1.0) : independent_pairs(N, 1.0, 1.0),
                                               c.validate.trials, seed);
            rep.items.push_back({suite, "max inner product", d.dissipative, d.max_inner, 1e-12,
                                 what + (spin ? ", boundary-matched pairs" : ", independent pairs")});
        } else if (suite == "growth-lipschitz") {
            const auto g = check_growth_and_lipschitz(problem.f0, op, problem.alpha, {0.5, 1.0, 2.0, 5.0},
                                                      std::min<std::size_t>(c.validate.trials, 10000) / 4 + 1,
                                                      seed + 1, spin ? 0.0 : 1.0);
            rep.items.push_back({suite, "growth ratio", g.worst_growth_ratio <= 1.0, g.worst_growth_ratio, 1.0,
                                 "|f0(y)| / (S (1 + ||y||^gamma))"});
            rep.items.push_back({suite, "lipschitz ratio", g.worst_lipschitz_ratio <= 1.0, g.worst_lipschitz_ratio,
                                 1.0, "|f0(y)-f0(y')| / (L_R ||y-y'||)"});
        } else if (suite == "smoothing") {
            const double alpha = problem.alpha;
            const double beta = problem.theta() > alpha ? problem.theta() : alpha + 0.5 * (1.0 - alpha);
            const double coarse = smoothing_bound_check(op, alpha, beta, 32, seed + 2, 64);
            const double fine = smoothing_bound_check(op, alpha, beta, 32, seed + 2, 128);
            const double change = std::abs(fine - coarse) / std::max(fine, 1e-300);
            rep.items.push_back({suite, "bound stable under grid refinement", std::isfinite(fine) && change <= 0.05,
                                 change, 0.05,
                                 "sup t^{beta-alpha} ||e^{tA}x||_beta = " + format_number(fine)});
        } else if (suite == "interpolation") {
            double alpha = problem.alpha, theta = problem.theta();
            if (!(alpha > 0.0 && alpha < theta && theta < 1.0)) alpha = 0.25, theta = 0.75;
            const double constant = estimate_interpolation_constant(op, alpha, theta, 256, seed + 3);
            std::mt19937_64 rng(seed + 4);
            const std::size_t samples = std::min<std::size_t>(c.validate.trials, 10000);
            double ratio = 0.0;
            for (std::size_t i = 0; i < samples; ++i) {
                const State x = random_state(rng, N, 1.0, i % 2 ? 1.0 : 0.0);
                ratio = std::max(ratio, interpolation_inequality_check(op, alpha, theta, x).ratio);
            }
            rep.items.push_back({suite, "fresh samples against the estimated constant", ratio <= constant * 1.1,
                                 ratio, constant * 1.1, "c = " + format_number(constant)});
        } else if (suite == "gronwall") {
            const GronwallInput in{1.0, 1.0, 0.0, 1.0, 1.0};
            const auto rec = gronwall_recursion(in);
            double err = 0.0;
            for (int i = 0; i < 20; ++i) {
                const double t = 0.05 * i;
                err = std::max(err, std::abs(rec.value(in, t) - std::exp(1.0 - t)));
            }
            rep.items.push_back({suite, "recursion limit vs e^{1-t}", err <= 1e-3, err, 1e-3, "(a,b,alpha,beta,T) = (1,1,0,1,1)"});
            const double M = gronwall_constant(in);
            double excess = 0.0;
            for (const auto& row : gronwall_table(in, 41)) excess = std::max(excess, row.value - row.bound);
            rep.items.push_back({suite, "limit below a M (T-t)^{-alpha}", excess <= 0.0, excess, 0.0,
                                 "M = " + format_number(M)});
        } else if (suite == "conditional-expectation") {
            const std::size_t M = 100000;
            const auto ens = sample_ensemble(TimeGrid::uniform(1.0, 10), 1, M, seed + 5);
            ConditionalExpectation ce(ens, RegressionBasis{1, 1, 0.0});
            std::vector<double> target(ens.position_column(10, 0).begin(), ens.position_column(10, 0).end());
            const std::size_t l = 5;
            const auto proj = ce.project(l, target, 1);
            // residual variance T - t = 0.5, Var(W_t) = 0.5
            const double se0 = std::sqrt(0.5 / double(M));
            const double se1 = std::sqrt(0.5 / (double(M) * 0.5));
            const double dev = std::max(std::abs(proj.coefficients(0, 0)) / se0,
                                        std::abs(proj.coefficients(1, 0) - 1.0) / se1);
            rep.items.push_back({suite, "E[W_T | W_t] coefficients (0,1)", dev <= 3.0, dev, 3.0,
                                 "deviation in standard errors at M = 1e5"});
        }
    }
    if (write_files) write_text(c.out / "validation.json", rep.to_json().dump(2) + "\n");
    return rep;
}

}  // namespace bsde
