#include "twsim/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "twsim/error.hpp"

namespace twsim {

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); }

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) config_error(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            config_error(where + ": unknown key '" + key + "'");
        }
    }
}

double number(const Json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) config_error(where + ": missing '" + key + "'");
    const Json& v = j.at(key);
    if (!v.is_number()) config_error(where + ": '" + key + "' must be a number");
    return v.get<double>();
}

std::optional<double> optional_number(const Json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) return std::nullopt;
    return number(j, key, where);
}

std::string string_field(const Json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) config_error(where + ": missing '" + key + "'");
    if (!j.at(key).is_string()) config_error(where + ": '" + key + "' must be a string");
    return j.at(key).get<std::string>();
}

MagicFormulaCoeffs coeffs_from_json(const Json& j, const std::string& where) {
    check_keys(j, {"B", "C", "D", "E"}, where);
    return {number(j, "B", where), number(j, "C", where), number(j, "D", where), number(j, "E", where)};
}

// Rethrows validation failures as configuration errors.
template <typename F>
void validated(F&& fn, const std::string& where) {
    try {
        fn();
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::InvalidInput) throw;
        config_error(where + ": " + e.what());
    }
}

Json parse_json(const std::string& bytes, const std::string& where) {
    try {
        return Json::parse(bytes);
    } catch (const nlohmann::json::parse_error& e) {
        config_error(where + ": " + e.what());
    }
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

std::vector<std::pair<double, double>> read_pairs(std::istream& in, const char* a, const char* b) {
    auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidInput, m); };
    std::string line;
    if (!std::getline(in, line)) bad("empty CSV");
    const auto head = split_csv_line(line);
    if (head.size() != 2 || head[0] != a || head[1] != b) bad(std::string("CSV header must be '") + a + "," + b + "'");
    std::vector<std::pair<double, double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 2) bad("line " + std::to_string(lineno) + ": expected 2 columns");
        std::array<double, 2> v{};
        for (size_t k = 0; k < 2; ++k) {
            size_t used = 0;
            try {
                v[k] = std::stod(cells[k], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != cells[k].size() || !std::isfinite(v[k])) {
                bad("line " + std::to_string(lineno) + ": '" + cells[k] + "' is not a number");
            }
        }
        rows.emplace_back(v[0], v[1]);
    }
    return rows;
}

struct FileRef {
    std::string path;
    std::string sha256;
};

Json provenance_entry(const FileRef& f) { return Json{{"path", f.path}, {"sha256", f.sha256}}; }

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorKind::InvalidInput, "SHA-256 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) config_error("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

TireModel tire_from_json(const Json& j) {
    const std::string where = "tire";
    check_keys(j, {"longitudinal", "lateral", "slip_ratio_limit", "slip_angle_limit"}, where);
    if (!j.contains("longitudinal") || !j.contains("lateral")) config_error(where + ": needs longitudinal and lateral");
    TireModel t;
    t.longitudinal = coeffs_from_json(j.at("longitudinal"), where + ".longitudinal");
    t.lateral = coeffs_from_json(j.at("lateral"), where + ".lateral");
    t.slip_ratio_limit = number(j, "slip_ratio_limit", where);
    t.slip_angle_limit = number(j, "slip_angle_limit", where);
    validated([&] { t.validate(); }, where);
    return t;
}

Json tire_to_json(const TireModel& tire) {
    auto c = [](const MagicFormulaCoeffs& m) { return Json{{"B", m.B}, {"C", m.C}, {"D", m.D}, {"E", m.E}}; };
    return Json{{"longitudinal", c(tire.longitudinal)},
                {"lateral", c(tire.lateral)},
                {"slip_ratio_limit", tire.slip_ratio_limit},
                {"slip_angle_limit", tire.slip_angle_limit}};
}

EmissionParams emission_from_json(const Json& j) {
    const std::string where = "emission";
    check_keys(j, {"p2", "p1", "p0"}, where);
    EmissionParams p{number(j, "p2", where), number(j, "p1", where), number(j, "p0", where)};
    validated([&] { p.validate(); }, where);
    return p;
}

Json emission_to_json(const EmissionParams& p) { return Json{{"p2", p.p2}, {"p1", p.p1}, {"p0", p.p0}}; }

SolverFile solver_from_json(const Json& j) {
    const std::string where = "solver";
    check_keys(j, {"feas_tol", "opt_tol", "defect_tol", "max_iter", "delta_s"}, where);
    SolverFile s;
    if (auto v = optional_number(j, "feas_tol", where)) s.options.feas_tol = *v;
    if (auto v = optional_number(j, "opt_tol", where)) s.options.opt_tol = *v;
    if (auto v = optional_number(j, "defect_tol", where)) s.options.defect_tol = *v;
    if (j.contains("max_iter")) {
        if (!j.at("max_iter").is_number_integer()) config_error(where + ": 'max_iter' must be an integer");
        s.options.max_iter = j.at("max_iter").get<int>();
    }
    s.delta_s = optional_number(j, "delta_s", where);
    const auto& o = s.options;
    if (!(o.feas_tol > 0.0 && o.opt_tol > 0.0 && o.defect_tol > 0.0)) config_error(where + ": tolerances must be positive");
    if (o.max_iter < 1) config_error(where + ": 'max_iter' must be positive");
    if (s.delta_s && !(*s.delta_s > 0.0)) config_error(where + ": 'delta_s' must be positive");
    return s;
}

ScenarioConfig parse_config(const Json& j, const std::filesystem::path& base_dir, std::string_view config_bytes) {
    const std::string where = "config";
    check_keys(j,
               {"kind", "speed_kmh", "zeta", "vehicle", "radius", "straight_length", "lead", "braking_steps", "tires",
                "emission", "solver"},
               where);
    ScenarioConfig c;
    Scenario& s = c.scenario;
    try {
        s.kind = scenario_kind_from_string(string_field(j, "kind", where));
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::InvalidInput) throw;
        config_error(where + ": field 'kind': " + e.what());
    }
    s.speed_kmh = number(j, "speed_kmh", where);
    s.zeta = number(j, "zeta", where);
    if (j.contains("vehicle")) {
        try {
            c.vehicle = vehicle_kind_from_string(string_field(j, "vehicle", where));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::InvalidInput) throw;
            config_error(where + ": field 'vehicle': " + e.what());
        }
    }
    if (auto v = optional_number(j, "radius", where)) s.radius = *v;
    if (auto v = optional_number(j, "straight_length", where)) s.straight_length = *v;
    if (auto v = optional_number(j, "lead", where)) s.lead = *v;
    if (j.contains("braking_steps")) {
        if (!j.at("braking_steps").is_number_integer()) config_error(where + ": 'braking_steps' must be an integer");
        s.braking_steps = j.at("braking_steps").get<int>();
    }

    c.provenance = Json{{"config_sha256", sha256_hex(config_bytes)}};
    Json files = Json::object();
    auto load = [&](const std::string& rel, const std::string& label) {
        const auto path = base_dir / rel;
        const std::string bytes = read_file(path);
        files[label] = provenance_entry({rel, sha256_hex(bytes)});
        return parse_json(bytes, label);
    };
    auto pair_refs = [&](const char* key) -> std::optional<std::pair<std::string, std::string>> {
        if (!j.contains(key)) return std::nullopt;
        const std::string w = where + "." + key;
        check_keys(j.at(key), {"soft", "hard"}, w);
        return std::pair{string_field(j.at(key), "soft", w), string_field(j.at(key), "hard", w)};
    };
    if (auto refs = pair_refs("tires")) {
        s.tires.soft = tire_from_json(load(refs->first, "tires.soft"));
        s.tires.hard = tire_from_json(load(refs->second, "tires.hard"));
    }
    if (auto refs = pair_refs("emission")) {
        s.emission.soft = emission_from_json(load(refs->first, "emission.soft"));
        s.emission.hard = emission_from_json(load(refs->second, "emission.hard"));
    }
    if (j.contains("solver")) {
        const SolverFile sf = solver_from_json(load(string_field(j, "solver", where), "solver"));
        s.solver = sf.options;
        if (sf.delta_s) s.step = *sf.delta_s;
    }
    c.provenance["files"] = files;
    validated([&] { s.validate(); }, where);
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    return parse_config(parse_json(bytes, path.string()), path.parent_path(), bytes);
}

std::string run_key(const Scenario& scenario, VehicleKind vehicle) {
    return scenario.key() + "_" + to_string(vehicle);
}

void write_trajectory_csv(std::ostream& out, const Scenario& scenario, const OcpSolution& sol, VehicleKind vehicle,
                          const std::vector<ControlDecision>* decisions) {
    const EmissionParams& pf = vehicle == VehicleKind::Base ? scenario.emission.soft : scenario.emission.hard;
    const EmissionParams& pr = scenario.emission.soft;
    out << "i,s,t,n,beta,u,v,delta,omega_f,omega_r,T_f,T_r,sigma,F_vf,F_vr,F_uf,F_ur,PN_f,PN_r,defect_max,"
           "violation_max,delta_sigma,F_vf_ref,F_vr_ref,mode,clamped\n";
    for (size_t i = 0; i < sol.states.size(); ++i) {
        const auto& x = sol.states[i];
        const auto& in = sol.inputs[i];
        const auto& f = sol.forces[i].forces;
        out << i;
        for (double v : {sol.s[i], x.t, x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, in.torque_f,
                         in.torque_r, in.sigma, f.f_vf, f.f_vr, f.f_uf, f.f_ur, particle_number(f.f_vf, pf),
                         particle_number(f.f_vr, pr), sol.defect_max, sol.violations.max()}) {
            out << ',' << fmt(v);
        }
        if (decisions && i < decisions->size()) {
            const auto& d = (*decisions)[i];
            out << ',' << fmt(d.delta_sigma) << ',' << fmt(d.f_vf_ref) << ',' << fmt(d.f_vr_ref) << ','
                << (d.mode == ControlMode::Steering ? "steering" : "zero-steering") << ',' << (d.clamped ? 1 : 0);
        } else {
            out << ",,,,,";
        }
        out << '\n';
    }
}

Json run_summary(const ScenarioConfig& config, VehicleKind vehicle, const OcpSolution& sol, const RunMetrics& m) {
    const Scenario& s = config.scenario;
    const double violation = sol.violations.max();
    Json j;
    j["key"] = run_key(s, vehicle);
    j["scenario"] = s.key();
    j["kind"] = to_string(s.kind);
    j["vehicle"] = to_string(vehicle);
    j["speed_kmh"] = s.speed_kmh;
    j["zeta"] = s.zeta;
    j["radius"] = s.kind == ScenarioKind::Curved ? Json(s.arc_radius()) : Json(nullptr);
    j["path_length"] = s.path().total_length();
    j["steps"] = sol.states.size() - 1;
    j["delta_s"] = sol.delta_s;
    j["solver"] = Json{{"converged", sol.converged},
                       {"iterations", sol.iterations},
                       {"message", sol.message},
                       {"objective", sol.objective},
                       {"defect_max", sol.defect_max},
                       {"violation_max", std::isfinite(violation) ? Json(violation) : Json(nullptr)},
                       {"worst_violation", sol.violations.worst()}};
    j["metrics"] = Json{{"stopping_distance", s.kind == ScenarioKind::Braking ? Json(m.stopping_distance) : Json(nullptr)},
                        {"peak_deceleration", m.peak_deceleration},
                        {"duration", m.duration},
                        {"pn_total", m.pn_total},
                        {"pn_unweighted", m.pn_unweighted},
                        {"pn_front", m.pn_front},
                        {"pn_rear", m.pn_rear}};
    j["provenance"] = config.provenance;
    return j;
}

Json compare_summaries(const Json& base, const Json& low_wear) {
    try {
        auto same = [&](const char* k) { return base.at(k) == low_wear.at(k); };
        if (!same("kind") || !same("speed_kmh") || !same("zeta")) {
            throw Error(ErrorKind::KeyMismatch, "scenarios differ: '" + base.at("scenario").get<std::string>() +
                                                    "' vs '" + low_wear.at("scenario").get<std::string>() + "'");
        }
        if (base.at("vehicle") != "base" || low_wear.at("vehicle") != "low_wear") {
            throw Error(ErrorKind::KeyMismatch, "expected a base and a low_wear summary");
        }
        const auto& mb = base.at("metrics");
        const auto& ml = low_wear.at("metrics");
        const double pb = mb.at("pn_total").get<double>(), pl = ml.at("pn_total").get<double>();
        const double ub = mb.at("pn_unweighted").get<double>(), ul = ml.at("pn_unweighted").get<double>();
        const double red = reduction_percent(pb, pl);
        Json row;
        row["scenario"] = base.at("scenario");
        row["kind"] = base.at("kind");
        row["speed_kmh"] = base.at("speed_kmh");
        row["zeta"] = base.at("zeta");
        row["pn_base"] = pb;
        row["pn_low_wear"] = pl;
        row["reduction_percent"] = red;
        row["reduction_rounded"] = std::lround(red);
        row["pn_unweighted_base"] = ub;
        row["pn_unweighted_low_wear"] = ul;
        row["reduction_unweighted_percent"] = reduction_percent(ub, ul);
        row["peak_deceleration_base"] = mb.at("peak_deceleration");
        row["peak_deceleration_low_wear"] = ml.at("peak_deceleration");
        if (base.at("kind") == "braking") {
            const double db = mb.at("stopping_distance").get<double>(), dl = ml.at("stopping_distance").get<double>();
            row["stopping_distance_base"] = db;
            row["stopping_distance_low_wear"] = dl;
            row["stopping_distance_delta"] = dl - db;
            row["stopping_distance_ratio"] = dl / db;
        }
        return row;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidInput, std::string("malformed summary: ") + e.what());
    }
}

Report build_report(const std::vector<Json>& summaries) {
    using Cell = std::tuple<int, double, double>;  // kind, zeta, speed
    struct Pair {
        const Json* base = nullptr;
        const Json* low = nullptr;
    };
    std::map<Cell, Pair> cells;
    std::set<int> kinds;
    for (const auto& s : summaries) {
        try {
            const int k = static_cast<int>(scenario_kind_from_string(s.at("kind").get<std::string>()));
            Pair& p = cells[{k, s.at("zeta").get<double>(), s.at("speed_kmh").get<double>()}];
            (s.at("vehicle") == "base" ? p.base : p.low) = &s;
            kinds.insert(k);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::InvalidInput, std::string("malformed summary: ") + e.what());
        }
    }
    for (int k : kinds) {
        for (double z : {0.5, 1.0}) {
            for (double v : {30.0, 60.0, 120.0}) cells.try_emplace({k, z, v});
        }
    }
    std::vector<std::string> missing;
    for (const auto& [cell, p] : cells) {
        const auto& [k, z, v] = cell;
        const std::string name = to_string(static_cast<ScenarioKind>(k)) + " zeta=" + fmt(z) + " speed=" + fmt(v);
        if (!p.base) missing.push_back(name + " base");
        if (!p.low) missing.push_back(name + " low_wear");
    }
    if (!missing.empty()) {
        std::string msg = "missing runs:";
        for (const auto& m : missing) msg += " [" + m + "]";
        throw Error(ErrorKind::MissingRun, msg);
    }

    Report r;
    r.csv = "table,kind,zeta,speed_kmh,stopping_base,stopping_low_wear,stopping_ratio,peak_decel_base,"
            "peak_decel_low_wear,pn_base,pn_low_wear,reduction_percent,reduction_rounded,pn_unweighted_base,"
            "pn_unweighted_low_wear,reduction_unweighted_percent\n";
    const std::array<const char*, 3> titles = {"Stopping distance and peak deceleration (braking)",
                                               "Emission comparison, straight path",
                                               "Emission comparison, curved path"};
    std::ostringstream text;
    for (int k : kinds) {
        const bool braking = static_cast<ScenarioKind>(k) == ScenarioKind::Braking;
        text << titles[static_cast<size_t>(k)] << "\n";
        char line[200];
        if (braking) {
            std::snprintf(line, sizeof line, "%6s %6s %11s %11s %7s %10s %10s\n", "zeta", "km/h", "dist base",
                          "dist low", "ratio", "peak base", "peak low");
        } else {
            std::snprintf(line, sizeof line, "%6s %6s %12s %12s %10s %8s %10s\n", "zeta", "km/h", "PN base",
                          "PN low", "reduction", "rounded", "unweighted");
        }
        text << line;
        for (const auto& [cell, p] : cells) {
            const auto& [ck, z, v] = cell;
            if (ck != k) continue;
            const Json row = compare_summaries(*p.base, *p.low);
            const double red = row["reduction_percent"].get<double>();
            const double red_u = row["reduction_unweighted_percent"].get<double>();
            const auto& mb = p.base->at("metrics");
            const auto& ml = p.low->at("metrics");
            std::string db, dl, ratio;
            if (braking) {
                db = fmt(row["stopping_distance_base"].get<double>());
                dl = fmt(row["stopping_distance_low_wear"].get<double>());
                ratio = fmt(row["stopping_distance_ratio"].get<double>());
                std::snprintf(line, sizeof line, "%6.2g %6g %11.2f %11.2f %7.3f %10.2f %10.2f\n", z, v,
                              row["stopping_distance_base"].get<double>(),
                              row["stopping_distance_low_wear"].get<double>(),
                              row["stopping_distance_ratio"].get<double>(), mb["peak_deceleration"].get<double>(),
                              ml["peak_deceleration"].get<double>());
            } else {
                std::snprintf(line, sizeof line, "%6.2g %6g %12.4g %12.4g %9.2f%% %8ld %9.2f%%\n", z, v,
                              row["pn_base"].get<double>(), row["pn_low_wear"].get<double>(), red,
                              std::lround(red), red_u);
            }
            text << line;
            r.csv += std::to_string(k + 2) + "," + to_string(static_cast<ScenarioKind>(k)) + "," + fmt(z) + "," +
                     fmt(v) + "," + db + "," + dl + "," + ratio + "," + fmt(mb["peak_deceleration"].get<double>()) +
                     "," + fmt(ml["peak_deceleration"].get<double>()) + "," + fmt(row["pn_base"].get<double>()) +
                     "," + fmt(row["pn_low_wear"].get<double>()) + "," + fmt(red) + "," +
                     std::to_string(std::lround(red)) + "," + fmt(row["pn_unweighted_base"].get<double>()) + "," +
                     fmt(row["pn_unweighted_low_wear"].get<double>()) + "," + fmt(red_u) + "\n";
        }
        text << "\n";
    }
    r.text = text.str();
    return r;
}

std::vector<SlipSample> read_slip_csv(std::istream& in) {
    std::vector<SlipSample> out;
    for (const auto& [a, b] : read_pairs(in, "slip", "mu")) out.push_back({a, b});
    return out;
}

std::vector<EmissionSample> read_emission_csv(std::istream& in) {
    std::vector<EmissionSample> out;
    for (const auto& [a, b] : read_pairs(in, "force_n", "pn")) out.push_back({a, b});
    return out;
}

}  // namespace twsim
