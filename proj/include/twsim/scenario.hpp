#pragma once

#include <string>
#include <vector>

#include "twsim/controller.hpp"
#include "twsim/ocp.hpp"

namespace twsim {

enum class ScenarioKind { Braking, Straight, Curved };
enum class VehicleKind { Base, LowWear };

std::string to_string(ScenarioKind kind);
std::string to_string(VehicleKind vehicle);
// Throws InvalidInput on unknown names.
ScenarioKind scenario_kind_from_string(const std::string& name);
VehicleKind vehicle_kind_from_string(const std::string& name);

// Arc radius paired with each test speed: 30 -> 32 m, 60 -> 127 m, 120 -> 510 m.
// Throws InvalidInput for other speeds.
double paired_radius(double speed_kmh);

struct Scenario {
    ScenarioKind kind = ScenarioKind::Straight;
    double speed_kmh = 60.0;  // initial speed for braking, speed limit otherwise
    double zeta = 1.0;
    double radius = 0.0;      // curved only; 0 selects the paired radius
    double straight_length = 400.0;
    double lead = 100.0;      // curved: straight before and after the quarter arc
    double step = 1.0;        // target delta_s in m for straight and curved paths
    int braking_steps = 100;
    VehicleParams params;
    DualTires tires{reference_soft_tire(), reference_hard_tire()};
    DualEmission emission{reference_soft_emission(), reference_hard_emission()};
    ControllerConfig controller;
    NlpOptions solver;

    double speed() const { return speed_kmh / 3.6; }
    double arc_radius() const;
    // e.g. "curved_60kmh_z1.0"
    std::string key() const;
    Path path() const;
    int steps() const;
    // Throws InvalidInput.
    void validate() const;
};

// Straight running at speed v with the wheel slip that balances drag.
VehicleState cruising_state(double v, const VehicleParams& params, const TireModel& front, const TireModel& rear);

// Min-time (straight, curved) or min-speed (braking) problem for the vehicle,
// with the tire compounds scaled by zeta.
OcpProblem driver_problem(const Scenario& scenario, VehicleKind vehicle);

// Base-vehicle driver trajectory. Propagates solver errors.
OcpSolution generate_driver_trajectory(const Scenario& scenario);

// Controller inputs at one station of a solved trajectory.
Measurements measurements_at(const OcpSolution& sol, size_t i, const OcpProblem& problem);

struct LowWearRun {
    std::vector<ControlDecision> decisions;  // per station
    OcpSolution solution;
};

// Braking: min-speed solve with the low-wear tires. Otherwise the controller
// turns every base station into reference forces and a steering correction,
// which a force-tracking solve converts into wheel torques.
LowWearRun run_low_wear(const Scenario& scenario, const OcpSolution& base);

struct RunMetrics {
    double stopping_distance = 0.0;   // braking only, m
    double peak_deceleration = 0.0;   // m/s^2
    double duration = 0.0;            // s
    double pn_total = 0.0;            // time-weighted, (#/cm^3) s
    double pn_unweighted = 0.0;       // plain sum over steps, #/cm^3
    double pn_front = 0.0;
    double pn_rear = 0.0;
};

// Speed margin within which a station counts as having reached the floor, m/s.
inline constexpr double kFloorTolerance = 0.05;

// Extrapolated to standstill at the peak deceleration from the last station
// before the speed reaches the floor. Throws InvalidInput if the floor is never
// reached.
double stopping_distance(const OcpSolution& sol, double v_floor);

RunMetrics trajectory_metrics(const Scenario& scenario, const OcpSolution& sol, VehicleKind vehicle);

// 100 (1 - pn_low / pn_base)
double reduction_percent(double pn_base, double pn_low);

struct ScenarioResult {
    Scenario scenario;
    OcpSolution base;
    LowWearRun low_wear;
    RunMetrics base_metrics;
    RunMetrics low_metrics;
};

// Both vehicles; the low-wear run only when requested.
ScenarioResult run_scenario(const Scenario& scenario, bool with_low_wear = true);

}  // namespace twsim
