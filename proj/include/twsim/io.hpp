#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "twsim/scenario.hpp"

namespace twsim {

using Json = nlohmann::ordered_json;

std::string sha256_hex(std::string_view bytes);
// Throws InvalidConfig when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

// Parameter files. Parsers reject unknown keys and non-numeric values with
// InvalidConfig naming the field; the result is validated.
TireModel tire_from_json(const Json& j);
Json tire_to_json(const TireModel& tire);
EmissionParams emission_from_json(const Json& j);
Json emission_to_json(const EmissionParams& p);

struct SolverFile {
    NlpOptions options;
    std::optional<double> delta_s;  // m, straight and curved paths
};
SolverFile solver_from_json(const Json& j);

struct ScenarioConfig {
    Scenario scenario;
    VehicleKind vehicle = VehicleKind::LowWear;  // low_wear runs the base vehicle too
    Json provenance;                             // config and parameter file hashes
};

// Strict JSON schema; referenced files resolve relative to the config file.
// Throws InvalidConfig.
ScenarioConfig load_config(const std::filesystem::path& path);
ScenarioConfig parse_config(const Json& j, const std::filesystem::path& base_dir, std::string_view config_bytes);

// Output directory name of one vehicle run, e.g. "straight_60kmh_z1.0_base".
std::string run_key(const Scenario& scenario, VehicleKind vehicle);

// Trajectory CSV: station states, inputs, forces, per-station PN and the
// solution's defect and violation maxima; controller columns are empty for
// runs without decisions.
void write_trajectory_csv(std::ostream& out, const Scenario& scenario, const OcpSolution& sol, VehicleKind vehicle,
                          const std::vector<ControlDecision>* decisions);

Json run_summary(const ScenarioConfig& config, VehicleKind vehicle, const OcpSolution& sol, const RunMetrics& metrics);

// Throws KeyMismatch unless kind, speed and zeta agree and the vehicles are
// base and low_wear.
Json compare_summaries(const Json& base, const Json& low_wear);

struct Report {
    std::string text;
    std::string csv;
};
// Tables for braking (distances, decelerations) and straight/curved (PN,
// reductions). A kind that appears must cover the full zeta x speed grid with
// both vehicles; throws MissingRun listing the absent cells otherwise.
Report build_report(const std::vector<Json>& summaries);

// Headers "slip,mu" and "force_n,pn". Throw InvalidInput on malformed rows.
std::vector<SlipSample> read_slip_csv(std::istream& in);
std::vector<EmissionSample> read_emission_csv(std::istream& in);

}  // namespace twsim
