#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twsim/dynamics.hpp"
#include "twsim/nlp.hpp"

namespace twsim {

enum class ObjectiveKind { MinTime, MinSpeed, ForceTracking };

struct ComfortLimits {
    bool enabled = true;
    double lat_accel = 5.6;  // |a_u| bound, m/s^2
    double lon_accel = 3.07; // upper bound on a_v, m/s^2
    double lat_jerk = 2.0;   // m/s^3
    double lon_jerk = 2.0;   // m/s^3
};

struct SteeringLimits {
    double max_angle = kMaxSteering;                 // rad
    double max_rate = 3.14159265358979323846 / 12.0; // rad/s
};

struct LaneLimit {
    bool enabled = true;
    double half_width = 1.0;  // m
};

struct SpeedLimits {
    double v_min = kSpeedFloor;
    double v_max = 0.0;
};

// Per-station targets of the force-tracking objective. Forces are used at
// stations 1..d, steering, speed and lateral offset at every station 0..d.
// The lateral offset series is optional.
struct TrackingReference {
    std::vector<double> f_vf;
    std::vector<double> f_vr;
    std::vector<double> sigma;
    std::vector<double> v;
    std::vector<double> n;
    double force_scale = 100.0;      // N
    // relative to one force_scale of error
    double speed_weight = 100.0;     // per (m/s)^2
    double steering_weight = 1e4;    // per rad^2
    double lateral_weight = 1e3;     // per m^2
};

struct OcpProblem {
    Path path;
    int d = 0;
    ObjectiveKind objective = ObjectiveKind::MinTime;
    ComfortLimits comfort;
    SteeringLimits steering;
    LaneLimit lane;
    SpeedLimits speed;
    VehicleParams params;
    TireModel front;
    TireModel rear;
    VehicleState initial;
    std::optional<double> final_speed;
    TrackingReference reference;  // ForceTracking only
    double split_weight = 1e-3;   // penalty on the normalised front/rear force split, min-time and min-speed
    double smooth_weight = 1e-3;  // penalty on steering increments, min-time and min-speed

    double delta_s() const { return path.total_length() / d; }
    // Throws InvalidInput when d < 2, limits are not finite and positive, or
    // reference series have the wrong length.
    void validate() const;
};

// Largest signed violation per constraint class; <= 0 means satisfied.
struct ViolationReport {
    double lane = 0.0;
    double steering = 0.0;
    double steering_rate = 0.0;
    double slip = 0.0;
    double speed = 0.0;
    double lat_accel = 0.0;
    double lon_accel = 0.0;
    double lat_jerk = 0.0;
    double lon_jerk = 0.0;

    double max() const;
    // Name of the class holding max().
    std::string worst() const;
};

struct OcpSolution {
    double delta_s = 0.0;
    std::vector<double> s;
    std::vector<VehicleState> states;   // d + 1
    std::vector<ControlInput> inputs;   // d + 1
    std::vector<ForceReport> forces;    // d + 1
    std::vector<double> a_v;            // body longitudinal acceleration, d + 1
    std::vector<double> a_u;            // body lateral acceleration, d + 1
    double objective = 0.0;             // the problem's objective in physical units
    double defect_max = 0.0;            // scaled Euler defect
    ViolationReport violations;
    int iterations = 0;
    bool converged = false;
    std::string message;
    std::vector<MeritRecord> merit_log;
};

// Direct transcription with Euler defects, solved by the interior point method.
// Throws Infeasible or Diverged from the solver.
OcpSolution solve(const OcpProblem& problem, const NlpOptions& options = {});

// Sum of dt/ds * delta_s over the d steps.
double objective_min_time(std::span<const VehicleState> states, const Path& path, double delta_s);
// Sum of v^2 over stations 1..d; station 0 is the given initial state.
double objective_min_speed(std::span<const VehicleState> states);
// Sum over stations 1..d of the squared longitudinal force errors; references
// hold d entries. Throws InvalidInput on a length mismatch.
double objective_force_tracking(std::span<const ForceReport> forces, std::span<const double> f_vf_ref,
                                std::span<const double> f_vr_ref);

// Body-frame accelerations (dv/dt - u delta, du/dt + v delta) at one station.
std::pair<double, double> body_accelerations(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                                             const TireModel& front, const TireModel& rear);

// Violations of the problem's constraint set along a trajectory. Jerk and
// steering rate use finite differences over elapsed time.
ViolationReport constraint_eval(std::span<const VehicleState> states, std::span<const ControlInput> inputs,
                                const OcpProblem& problem);

}  // namespace twsim
