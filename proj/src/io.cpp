#include "bsde/io.hpp"

#include "bsde/errors.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>

namespace bsde {

namespace {

constexpr char kEnsembleMagic[8] = {'B', 'S', 'D', 'E', 'W', 'E', 'N', 'S'};
constexpr char kProcessMagic[8] = {'B', 'S', 'D', 'E', 'G', 'P', 'R', 'C'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw Error("truncated binary file");
    return v;
}

void put_doubles(std::ostream& out, std::span<const double> v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::istream& in, std::size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw Error("truncated binary file");
    return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path, const char (&magic)[8]) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    char head[8];
    in.read(head, 8);
    if (!in || std::memcmp(head, magic, 8) != 0) throw Error(path.string() + ": bad magic");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion) throw Error(path.string() + ": unsupported version " + std::to_string(version));
    return in;
}

}  // namespace

void save_ensemble(const std::filesystem::path& path, const WienerEnsemble& ens) {
    auto out = open_out(path);
    out.write(kEnsembleMagic, 8);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, ens.seed());
    put<std::uint64_t>(out, ens.paths());
    put<std::uint64_t>(out, ens.steps());
    put<std::uint64_t>(out, ens.noise_dim());
    put_doubles(out, ens.grid().times());
    put_doubles(out, ens.path_major_increments());
    if (!out) throw Error("write failed: " + path.string());
}

WienerEnsemble load_ensemble(const std::filesystem::path& path) {
    auto in = open_in(path, kEnsembleMagic);
    const auto seed = get<std::uint64_t>(in);
    const auto M = get<std::uint64_t>(in);
    const auto L = get<std::uint64_t>(in);
    const auto K = get<std::uint64_t>(in);
    auto times = get_doubles(in, L + 1);
    auto inc = get_doubles(in, M * L * K);
    return WienerEnsemble(TimeGrid(std::move(times)), K, M, seed, inc);
}

void save_process(const std::filesystem::path& path, const GridProcess& p) {
    auto out = open_out(path);
    out.write(kProcessMagic, 8);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, p.times());
    put<std::uint64_t>(out, p.dim());
    put<std::uint64_t>(out, p.paths());
    put_doubles(out, p.data());
    if (!out) throw Error("write failed: " + path.string());
}

GridProcess load_process(const std::filesystem::path& path) {
    auto in = open_in(path, kProcessMagic);
    const auto times = get<std::uint64_t>(in);
    const auto dim = get<std::uint64_t>(in);
    const auto paths = get<std::uint64_t>(in);
    GridProcess p(times, dim, paths);
    auto data = get_doubles(in, times * dim * paths);
    std::copy(data.begin(), data.end(), p.data().begin());
    return p;
}

void save_solution(const std::filesystem::path& dir, const SolutionPair& s, const Json& extra) {
    std::filesystem::create_directories(dir);
    save_process(dir / "Y.bin", s.Y);
    save_process(dir / "Z.bin", s.Z);
    Json m;
    m["format"] = "bsde-grid-process v1";
    m["layout"] = "index (l * dim + n) * paths + m, doubles";
    m["Y"] = {{"file", "Y.bin"}, {"times", s.Y.times()}, {"dim", s.Y.dim()}, {"paths", s.Y.paths()}};
    m["Z"] = {{"file", "Z.bin"},
              {"times", s.Z.times()},
              {"dim", s.Z.dim()},
              {"paths", s.Z.paths()},
              {"component", "n * K + k"}};
    std::vector<double> t(s.grid.times().begin(), s.grid.times().end());
    m["grid"] = t;
    if (!extra.is_null()) m["run"] = extra;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

namespace {
Json numbers(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}
}  // namespace

Json to_json(const OperatorConstants& c) {
    return Json{{"G", number(c.holder_G)},
                {"M_alpha", number(c.m_alpha)},
                {"C_alpha", number(c.c_alpha)},
                {"interpolation_c", number(c.interpolation_c)},
                {"smoothing_c0", number(c.smoothing_c0)}};
}

Json to_json(const RadiusDelta& r) {
    return Json{{"R", number(r.radius)}, {"delta", number(r.delta)}, {"delta0", number(r.delta0)},
                {"delta1", number(r.delta1)}};
}

Json to_json(const WindowRecord& w) {
    return Json{{"t_begin", number(w.t_begin)},
                {"t_end", number(w.t_end)},
                {"steps", w.window.end - w.window.begin},
                {"radius", number(w.radius)},
                {"delta_formula", number(w.delta_formula)},
                {"iterations", w.iterations},
                {"halvings", w.halvings},
                {"distances", numbers(w.distances)},
                {"factors", numbers(w.factors)},
                {"max_alpha_norm", number(w.max_alpha_norm)},
                {"in_ball", w.in_ball}};
}

Json to_json(const SolverReport& r) {
    Json j;
    j["problem"] = r.problem;
    j["constants"] = to_json(r.constants);
    j["safety"] = r.safety;
    j["tol"] = number(r.tol);
    j["shift_lambda"] = number(r.shift_lambda);
    j["grid_refinement"] = r.refinement_factor;
    j["R"] = number(r.radius_first);
    j["R_2"] = number(r.radius_later);
    j["first_window"] = to_json(r.first_selection);
    j["later_windows"] = to_json(r.later_selection);
    j["delta_schedule"] = numbers(r.delta_schedule);
    Json ws = Json::array();
    for (const auto& w : r.windows) ws.push_back(to_json(w));
    j["windows"] = ws;
    j["C_1"] = number(r.c1);
    j["max_h_norm"] = number(r.max_h_norm);
    j["C_2"] = number(r.c2);
    j["theta"] = number(r.theta);
    j["blowup_envelope"] = {{"proxy", "ensemble max over paths of ||Y_t||_theta"},
                            {"min_margin", number(r.min_blowup_margin)},
                            {"margins", numbers(r.blowup_margins)}};
    j["outer"] = {{"beta", number(r.beta_weight)},
                  {"iterations", r.outer_iterations},
                  {"squared_distances", numbers(r.outer_distances)},
                  {"factors", numbers(r.outer_factors)}};
    j["residual"] = number(r.residual);
    j["residual_within_tol"] = r.residual_within_tol;
    j["regression_flagged_steps"] = r.regression_flagged_steps;
    j["simd"] = r.simd_isa;
    return j;
}

std::string format_number(double v) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10e", v);
    return buf;
}

CsvWriter::CsvWriter(std::ostream& out, const std::string& schema, int version,
                     const std::vector<std::string>& columns)
    : out_(out), columns_(columns.size()) {
    out_ << "# " << schema << " v" << version << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
}

void CsvWriter::row(const std::vector<double>& values) {
    if (values.size() != columns_) throw Error("csv row has the wrong width");
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
    out_ << "\n";
}

void CsvWriter::row(const std::vector<std::string>& values) {
    if (values.size() != columns_) throw Error("csv row has the wrong width");
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << values[i];
    out_ << "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

}  // namespace bsde
