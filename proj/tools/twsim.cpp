#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "twsim/error.hpp"
#include "twsim/io.hpp"

using namespace twsim;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitSolver = 2;

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidConfig:
        case ErrorKind::InvalidInput:
        case ErrorKind::KeyMismatch:
        case ErrorKind::MissingRun:
            return kExitConfig;
        default:
            return kExitSolver;
    }
}

fs::path output_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("TWSIM_OUT"); env && *env) return env;
    return "out";
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::InvalidConfig, "cannot write '" + path.string() + "'");
    f << text;
}

Json read_json(const fs::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::InvalidInput, path.string() + ": " + e.what());
    }
}

void warn_if_unconverged(const OcpSolution& sol, const std::string& key) {
    if (!sol.converged) {
        std::cerr << "warning: " << key << ": " << sol.message << " (worst constraint class "
                  << sol.violations.worst() << ")\n";
    }
}

void write_run(const fs::path& out, const ScenarioConfig& c, VehicleKind vehicle, const OcpSolution& sol,
               const RunMetrics& m, const std::vector<ControlDecision>* decisions, Json extra = {}) {
    const fs::path dir = out / run_key(c.scenario, vehicle);
    std::ostringstream csv;
    write_trajectory_csv(csv, c.scenario, sol, vehicle, decisions);
    write_text(dir / "trajectory.csv", csv.str());
    Json summary = run_summary(c, vehicle, sol, m);
    for (auto& [k, v] : extra.items()) summary[k] = v;
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    std::cout << run_key(c.scenario, vehicle) << ": PN " << m.pn_total;
    if (c.scenario.kind == ScenarioKind::Braking) std::cout << ", stopping distance " << m.stopping_distance << " m";
    std::cout << ", peak deceleration " << m.peak_deceleration << " m/s^2\n";
}

int simulate(const std::string& config_path, const std::string& out_flag) {
    const ScenarioConfig c = load_config(config_path);
    const fs::path out = output_dir(out_flag);
    const Scenario& s = c.scenario;

    const OcpSolution base = generate_driver_trajectory(s);
    warn_if_unconverged(base, run_key(s, VehicleKind::Base));
    const RunMetrics mb = trajectory_metrics(s, base, VehicleKind::Base);
    write_run(out, c, VehicleKind::Base, base, mb, nullptr);
    if (c.vehicle == VehicleKind::Base) return 0;

    const LowWearRun low = run_low_wear(s, base);
    warn_if_unconverged(low.solution, run_key(s, VehicleKind::LowWear));
    const RunMetrics ml = trajectory_metrics(s, low.solution, VehicleKind::LowWear);
    double dn = 0.0, dv = 0.0;
    for (size_t i = 0; i < base.states.size(); ++i) {
        dn = std::max(dn, std::abs(low.solution.states[i].n - base.states[i].n));
        dv = std::max(dv, std::abs(low.solution.states[i].v - base.states[i].v));
    }
    write_run(out, c, VehicleKind::LowWear, low.solution, ml, s.kind == ScenarioKind::Braking ? nullptr : &low.decisions,
              Json{{"equivalence", Json{{"max_abs_dn", dn}, {"max_abs_dv", dv}}}});
    std::cout << s.key() << ": emission reduction " << reduction_percent(mb.pn_total, ml.pn_total) << " %\n";
    return 0;
}

int compare(const std::string& base, const std::string& low) {
    std::cout << compare_summaries(read_json(base), read_json(low)).dump(2) << "\n";
    return 0;
}

int report(const std::string& dir_flag) {
    const fs::path dir = output_dir(dir_flag);
    std::vector<Json> summaries;
    if (fs::is_directory(dir)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_directory() && fs::exists(e.path() / "summary.json")) files.push_back(e.path() / "summary.json");
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) summaries.push_back(read_json(f));
    }
    const Report r = build_report(summaries);
    write_text(dir / "report" / "tables.csv", r.csv);
    std::cout << r.text;
    return 0;
}

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::InvalidInput, "cannot read '" + path + "'");
    return in;
}

int fit_tire(const std::string& input, const std::string& output) {
    auto in = open_input(input);
    const auto fit = fit_magic_formula(read_slip_csv(in));
    const auto& c = fit.coeffs;
    write_text(fs::absolute(output), Json{{"B", c.B}, {"C", c.C}, {"D", c.D}, {"E", c.E}}.dump(2) + "\n");
    std::cout << "B " << c.B << "  C " << c.C << "  D " << c.D << "  E " << c.E << "\nRMS " << fit.rms << "\n";
    return 0;
}

int fit_emission(const std::string& input, const std::string& output) {
    auto in = open_input(input);
    const auto fit = fit_emission_quadratic(read_emission_csv(in));
    write_text(fs::absolute(output), emission_to_json(fit.params).dump(2) + "\n");
    std::cout << "p2 " << fit.params.p2 << "  p1 " << fit.params.p1 << "  p0 " << fit.params.p0 << "\nR^2 "
              << fit.r_squared << (fit.constraint_active ? "  (nonnegativity constraint active)" : "") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual tire-profile vehicle simulation"};
    app.require_subcommand(1);

    std::string config, out, base, low, dir, input, output;
    auto* sim = app.add_subcommand("simulate", "Run one scenario for the base and low-wear vehicles");
    sim->add_option("--config", config, "Scenario config (JSON)")->required();
    sim->add_option("--out", out, "Output directory (default $TWSIM_OUT or ./out)");
    auto* cmp = app.add_subcommand("compare", "Compare a base and a low-wear summary");
    cmp->add_option("--base", base, "Base summary.json")->required();
    cmp->add_option("--lowwear", low, "Low-wear summary.json")->required();
    auto* rep = app.add_subcommand("report", "Tabulate all runs of an output directory");
    rep->add_option("--dir", dir, "Output directory (default $TWSIM_OUT or ./out)");
    auto* ft = app.add_subcommand("fit-tire", "Fit Magic Formula coefficients to slip,mu samples");
    ft->add_option("--input", input, "CSV with header slip,mu")->required();
    ft->add_option("--output", output, "Coefficient JSON")->required();
    auto* fe = app.add_subcommand("fit-emission", "Fit the emission quadratic to force_n,pn samples");
    fe->add_option("--input", input, "CSV with header force_n,pn")->required();
    fe->add_option("--output", output, "Emission parameter JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*sim) return simulate(config, out);
        if (*cmp) return compare(base, low);
        if (*rep) return report(dir);
        if (*ft) return fit_tire(input, output);
        if (*fe) return fit_emission(input, output);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSolver;
    }
    return 0;
}
