#pragma once

// Experiment configuration (INI-style sections) and the batch drivers behind
// the command line tool.

#include "bsde/bsde_solver.hpp"
#include "bsde/io.hpp"
#include "bsde/models.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bsde {

struct ModelConfig {
    std::string preset = "spin-chain";
    double horizon = 1.0;
    SpinSpec spin;
    ReactionDiffusionSpec diffusion;
    std::size_t heat_modes = 4;
};

struct DiscretizationConfig {
    std::size_t steps = 100;  // L
    std::size_t paths = 10000;  // M
    std::size_t noise = 0;    // K; 0 means what the model needs
    int basis_degree = 2;
    std::size_t basis_coordinates = 0;  // 0 means K
    double ridge = 1e-8;
};

struct ValidateConfig {
    std::vector<std::string> suites;  // empty means none
    std::size_t trials = 100000;
    std::string inject;  // "anti-dissipative" replaces f0 in the dissipativity suite
};

struct StudyConfig {
    std::vector<std::size_t> paths{1000, 10000};
    std::vector<std::size_t> steps{100};
};

enum class SolveMode { automatic, simplified, general };

struct ExperimentConfig {
    ModelConfig model;
    DiscretizationConfig discretization;
    SolverConfig solver;
    SolveMode mode = SolveMode::automatic;
    ValidateConfig validate;
    StudyConfig study;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = "out";
    std::string source;  // text of the config file, embedded in reports
};

/// Names accepted by --preset and [model] preset.
const std::vector<std::string>& preset_names();

/// Defaults for a named preset. Throws ValidationError for unknown names.
ExperimentConfig preset_config(const std::string& name);

/// Reads an INI file; keys absent from the file keep the preset's defaults.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);

/// Throws ValidationError when the config cannot be run (missing seed, unknown preset, ...).
void check_config(const ExperimentConfig& config);

BsdeProblem build_problem(const ModelConfig& model);

struct SolveOutcome {
    SolveResult result;
    std::string csv;
    Json report;
    ValidationReport validation;
};

/// Validates the model, solves, and writes report.json, solution.csv and the
/// (Y,Z) snapshot with its manifest under config.out. Throws ValidationError
/// when validation fails (unless overridden), Divergence/WindowCollapse on
/// solver failure.
SolveOutcome run_solve(const ExperimentConfig& config, bool write_files = true);

/// Same as run_solve without writing files, for one (M, L) point.
SolveResult solve_once(const ExperimentConfig& config, std::size_t paths, std::size_t steps);

/// One CSV row per (M, L): residual, worst Picard factor, worst outer factor.
std::string run_convergence_study(const ExperimentConfig& config, const std::vector<std::size_t>& paths,
                                  const std::vector<std::size_t>& steps, bool write_files = true);

struct SuiteItem {
    std::string suite;
    std::string name;
    bool pass = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string detail;
};

struct SuiteReport {
    std::vector<SuiteItem> items;
    bool all_pass() const;
    Json to_json() const;
};

/// Runs the suites listed in config.validate.suites ("all" expands to every suite).
SuiteReport run_validation(const ExperimentConfig& config, bool write_files = true);

}  // namespace bsde
