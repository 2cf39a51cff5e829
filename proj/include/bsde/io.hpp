#pragma once

// Binary checkpoints of ensembles and solution arrays, JSON reports and the
// versioned CSV tables written by the command line tool.

#include "bsde/bsde_solver.hpp"
#include "bsde/process.hpp"
#include "bsde/stochastic_driver.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace bsde {

using Json = nlohmann::ordered_json;

/// Ensemble file: "BSDEWENS", u32 version, u64 seed, u64 M, u64 L, u64 K,
/// L+1 times, then the increments path-major (M x L x K), all little-endian doubles.
void save_ensemble(const std::filesystem::path& path, const WienerEnsemble& ensemble);
WienerEnsemble load_ensemble(const std::filesystem::path& path);

/// Grid process file: "BSDEGPRC", u32 version, u64 times, u64 dim, u64 paths, data.
void save_process(const std::filesystem::path& path, const GridProcess& process);
GridProcess load_process(const std::filesystem::path& path);

/// Y.bin, Z.bin and manifest.json describing their shapes and layout.
void save_solution(const std::filesystem::path& dir, const SolutionPair& solution, const Json& extra = {});

Json to_json(const OperatorConstants& c);
Json to_json(const RadiusDelta& r);
Json to_json(const WindowRecord& w);
Json to_json(const SolverReport& report);

/// Finite numbers as numbers, anything else as null.
Json number(double v);

/// Comma-separated table with a "# <schema> v<version>" first line.
class CsvWriter {
public:
    CsvWriter(std::ostream& out, const std::string& schema, int version, const std::vector<std::string>& columns);
    void row(const std::vector<double>& values);
    void row(const std::vector<std::string>& values);

private:
    std::ostream& out_;
    std::size_t columns_;
};

std::string format_number(double v);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace bsde
