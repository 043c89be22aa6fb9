#include "twsim/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "twsim/error.hpp"

namespace twsim {

namespace {

DualTires scaled(const DualTires& t, double zeta) { return {t.soft.with_zeta(zeta), t.hard.with_zeta(zeta)}; }

// Drive slip whose Magic Formula force equals `force` on the given load.
double slip_for_force(const TireModel& tire, double load, double force) {
    double lo = 0.0, hi = tire.slip_ratio_limit;
    if (load * mf_eval(tire.longitudinal, hi, tire.zeta) < force) {
        throw Error(ErrorKind::InvalidInput, "drag exceeds the traction envelope");
    }
    for (int k = 0; k < 200; ++k) {
        const double mid = 0.5 * (lo + hi);
        (load * mf_eval(tire.longitudinal, mid, tire.zeta) < force ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

std::string to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::Braking: return "braking";
        case ScenarioKind::Straight: return "straight";
        case ScenarioKind::Curved: return "curved";
    }
    return "";
}

std::string to_string(VehicleKind vehicle) { return vehicle == VehicleKind::Base ? "base" : "low_wear"; }

ScenarioKind scenario_kind_from_string(const std::string& name) {
    if (name == "braking") return ScenarioKind::Braking;
    if (name == "straight") return ScenarioKind::Straight;
    if (name == "curved") return ScenarioKind::Curved;
    throw Error(ErrorKind::InvalidInput, "unknown scenario kind '" + name + "'");
}

VehicleKind vehicle_kind_from_string(const std::string& name) {
    if (name == "base") return VehicleKind::Base;
    if (name == "low_wear") return VehicleKind::LowWear;
    throw Error(ErrorKind::InvalidInput, "unknown vehicle '" + name + "'");
}

double paired_radius(double speed_kmh) {
    if (speed_kmh == 30.0) return 32.0;
    if (speed_kmh == 60.0) return 127.0;
    if (speed_kmh == 120.0) return 510.0;
    throw Error(ErrorKind::InvalidInput, "no paired radius for " + std::to_string(speed_kmh) + " km/h");
}

double Scenario::arc_radius() const { return radius > 0.0 ? radius : paired_radius(speed_kmh); }

std::string Scenario::key() const {
    char z[32];
    std::snprintf(z, sizeof z, "%g", zeta);
    std::string zs = z;
    if (zs.find_first_of(".e") == std::string::npos) zs += ".0";
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s_%gkmh_z%s", to_string(kind).c_str(), speed_kmh, zs.c_str());
    return buf;
}

Path Scenario::path() const {
    switch (kind) {
        case ScenarioKind::Braking: {
            // long enough for the weaker low-wear front axle, so both vehicles share the path
            const double a = kOperatingFraction * zeta * tires.hard.longitudinal.D * params.g;
            return Path::straight(1.4 * speed() * speed() / (2.0 * a));
        }
        case ScenarioKind::Straight:
            return Path::straight(straight_length);
        case ScenarioKind::Curved: {
            const double r = arc_radius();
            return Path::straight_arc_straight(lead, 0.5 * std::numbers::pi * r, r, TurnDirection::Left, lead);
        }
    }
    return {};
}

int Scenario::steps() const {
    if (kind == ScenarioKind::Braking) return braking_steps;
    return std::max(2, static_cast<int>(std::ceil(path().total_length() / step - 1e-9)));
}

void Scenario::validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidInput, m); };
    if (!(std::isfinite(speed_kmh) && speed_kmh > 3.6 * kSpeedFloor)) bad("speed must exceed the speed floor");
    if (!(zeta > 0.0 && zeta <= 1.0)) bad("zeta must lie in (0, 1]");
    if (!(radius >= 0.0) || !std::isfinite(radius)) bad("radius must be nonnegative");
    if (!(straight_length > 0.0 && lead > 0.0 && step > 0.0)) bad("path lengths and step must be positive");
    if (braking_steps < 2) bad("braking steps must be at least 2");
    if (kind == ScenarioKind::Curved) arc_radius();
    params.validate();
    tires.soft.validate();
    tires.hard.validate();
    emission.soft.validate();
    emission.hard.validate();
}

VehicleState cruising_state(double v, const VehicleParams& params, const TireModel& front, const TireModel& rear) {
    const AxleLoads loads = axle_loads(params);
    const double drag = params.c_d * v * v;
    VehicleState x = VehicleState::rolling(v, params.r_e);
    x.omega_f = v * (1.0 + slip_for_force(front, loads.front_normal, 0.5 * drag)) / params.r_e;
    x.omega_r = v * (1.0 + slip_for_force(rear, loads.rear_normal, 0.5 * drag)) / params.r_e;
    return x;
}

OcpProblem driver_problem(const Scenario& scenario, VehicleKind vehicle) {
    scenario.validate();
    const DualTires t = scaled(scenario.tires, scenario.zeta);
    OcpProblem p;
    p.path = scenario.path();
    p.d = scenario.steps();
    p.params = scenario.params;
    p.front = vehicle == VehicleKind::Base ? t.soft : t.hard;
    p.rear = t.soft;
    p.speed.v_max = scenario.speed();
    switch (scenario.kind) {
        case ScenarioKind::Braking:
            p.objective = ObjectiveKind::MinSpeed;
            p.comfort.enabled = false;
            p.initial = VehicleState::rolling(scenario.speed(), p.params.r_e);
            break;
        case ScenarioKind::Straight:
            p.objective = ObjectiveKind::MinTime;
            p.initial = cruising_state(p.speed.v_min, p.params, p.front, p.rear);
            p.final_speed = p.speed.v_min;
            break;
        case ScenarioKind::Curved:
            p.objective = ObjectiveKind::MinTime;
            p.initial = cruising_state(scenario.speed(), p.params, p.front, p.rear);
            break;
    }
    return p;
}

OcpSolution generate_driver_trajectory(const Scenario& scenario) {
    return solve(driver_problem(scenario, VehicleKind::Base), scenario.solver);
}

Measurements measurements_at(const OcpSolution& sol, size_t i, const OcpProblem& problem) {
    const auto& x = sol.states.at(i);
    const auto& in = sol.inputs.at(i);
    const auto e = evaluate_dynamics(x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, in.torque_f, in.torque_r,
                                     in.sigma, problem.params, problem.front, problem.rear, 0.0);
    return {in.sigma, x.u, x.v, x.delta, e.du_dt, e.dv_dt};
}

LowWearRun run_low_wear(const Scenario& scenario, const OcpSolution& base) {
    LowWearRun run;
    if (scenario.kind == ScenarioKind::Braking) {
        run.solution = solve(driver_problem(scenario, VehicleKind::LowWear), scenario.solver);
        return run;
    }
    const OcpProblem base_problem = driver_problem(scenario, VehicleKind::Base);
    const DualTires t = scaled(scenario.tires, scenario.zeta);
    const size_t n = base.states.size();
    if (n != static_cast<size_t>(base_problem.d) + 1) {
        throw Error(ErrorKind::InvalidInput, "base trajectory does not match the scenario grid");
    }

    OcpProblem p = base_problem;
    p.objective = ObjectiveKind::ForceTracking;
    p.comfort.enabled = false;
    p.front = t.hard;
    p.rear = t.soft;
    // same initial state as the driver problem; the solved station 0 carries round-off
    p.final_speed.reset();
    auto& ref = p.reference;
    for (size_t i = 0; i < n; ++i) {
        const ControlDecision dec =
            control_step(measurements_at(base, i, base_problem), p.params, t, scenario.emission, scenario.controller);
        run.decisions.push_back(dec);
        ref.f_vf.push_back(dec.f_vf_ref);
        ref.f_vr.push_back(dec.f_vr_ref);
        ref.sigma.push_back(base.inputs[i].sigma + dec.delta_sigma);
        ref.v.push_back(base.states[i].v);
        ref.n.push_back(base.states[i].n);
    }
    run.solution = solve(p, scenario.solver);
    return run;
}

double stopping_distance(const OcpSolution& sol, double v_floor) {
    double peak = 0.0;
    for (double a : sol.a_v) peak = std::max(peak, -a);
    // the barrier keeps the speed marginally above the floor
    const double reach = v_floor + kFloorTolerance;
    for (size_t i = 0; i + 1 < sol.states.size(); ++i) {
        if (sol.states[i + 1].v <= reach) {
            if (!(peak > 0.0)) break;
            return sol.s[i] + sol.states[i].v * sol.states[i].v / (2.0 * peak);
        }
    }
    throw Error(ErrorKind::InvalidInput, "the trajectory never reaches the speed floor");
}

RunMetrics trajectory_metrics(const Scenario& scenario, const OcpSolution& sol, VehicleKind vehicle) {
    RunMetrics m;
    for (double a : sol.a_v) m.peak_deceleration = std::max(m.peak_deceleration, -a);
    m.duration = sol.states.back().t - sol.states.front().t;
    if (scenario.kind == ScenarioKind::Braking) m.stopping_distance = stopping_distance(sol, kSpeedFloor);

    const size_t steps = sol.states.size() - 1;
    std::vector<double> f_vf(steps), f_vr(steps), dt(steps);
    for (size_t i = 0; i < steps; ++i) {
        f_vf[i] = sol.forces[i].forces.f_vf;
        f_vr[i] = sol.forces[i].forces.f_vr;
        dt[i] = sol.states[i + 1].t - sol.states[i].t;
    }
    const EmissionParams& front = vehicle == VehicleKind::Base ? scenario.emission.soft : scenario.emission.hard;
    const EmissionSeries e = trajectory_emission(f_vf, f_vr, dt, front, scenario.emission.soft);
    m.pn_total = e.total_weighted;
    m.pn_unweighted = e.total_unweighted;
    for (size_t i = 0; i < steps; ++i) {
        m.pn_front += e.front[i] * dt[i];
        m.pn_rear += e.rear[i] * dt[i];
    }
    return m;
}

double reduction_percent(double pn_base, double pn_low) {
    if (!(pn_base > 0.0)) throw Error(ErrorKind::InvalidInput, "base emission must be positive");
    return 100.0 * (1.0 - pn_low / pn_base);
}

ScenarioResult run_scenario(const Scenario& scenario, bool with_low_wear) {
    ScenarioResult r;
    r.scenario = scenario;
    r.base = generate_driver_trajectory(scenario);
    r.base_metrics = trajectory_metrics(scenario, r.base, VehicleKind::Base);
    if (with_low_wear) {
        r.low_wear = run_low_wear(scenario, r.base);
        r.low_metrics = trajectory_metrics(scenario, r.low_wear.solution, VehicleKind::LowWear);
    }
    return r;
}

}  // namespace twsim
