#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "twsim/tire.hpp"
#include "twsim/vehicle_params.hpp"

namespace twsim {

enum class SegmentKind { Straight, Arc };
enum class TurnDirection { Left, Right };

struct PathSegment {
    SegmentKind kind = SegmentKind::Straight;
    double length = 0.0;
    double radius = 0.0;  // arcs only
    TurnDirection direction = TurnDirection::Left;
};

class Path {
public:
    Path() = default;
    // Throws InvalidInput on empty lists, non-positive lengths or radii.
    explicit Path(std::vector<PathSegment> segments);

    static Path straight(double length);
    // straight lead-in, arc of `arc_length`, straight run-out
    static Path straight_arc_straight(double lead, double arc_length, double radius, TurnDirection dir, double tail);

    const std::vector<PathSegment>& segments() const { return segments_; }
    double total_length() const { return total_; }

    // Signed curvature: 0 on straights, -1/R on left arcs, +1/R on right arcs.
    // Right-continuous at segment boundaries. Throws OutOfPath outside [0, length].
    double curvature(double s) const;

private:
    std::vector<PathSegment> segments_;
    double total_ = 0.0;
};

struct VehicleState {
    double t = 0.0;
    double n = 0.0;
    double beta = 0.0;
    double u = 0.0;  // lateral velocity
    double v = 0.0;  // longitudinal velocity
    double delta = 0.0;  // yaw rate
    double omega_f = 0.0;
    double omega_r = 0.0;

    static constexpr int kSize = 8;
    std::array<double, kSize> to_array() const { return {t, n, beta, u, v, delta, omega_f, omega_r}; }
    static VehicleState from_array(const std::array<double, kSize>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
    }
    // Straight-ahead rolling state at speed v without wheel slip.
    static VehicleState rolling(double v, double r_e);
};

struct ControlInput {
    double torque_f = 0.0;
    double torque_r = 0.0;
    double sigma = 0.0;  // applied steering angle
};


// Per-second rates of the path-coordinate bicycle model.
struct TimeRates {
    double ds_dt = 0.0;
    double dn_dt = 0.0;
    double dbeta_dt = 0.0;
    double du_dt = 0.0;
    double dv_dt = 0.0;
    double ddelta_dt = 0.0;
    double domega_f_dt = 0.0;
    double domega_r_dt = 0.0;
};

// Per-meter rates; the Euler update direction in the path domain.
struct StateDerivative {
    double dt_ds = 0.0;
    double dn_ds = 0.0;
    double dbeta_ds = 0.0;
    double du_ds = 0.0;
    double dv_ds = 0.0;
    double ddelta_ds = 0.0;
    double domega_f_ds = 0.0;
    double domega_r_ds = 0.0;
};

// Everything the equations of motion produce at one instant, templated on the
// scalar so the optimal control transcription can differentiate through it.
template <typename T>
struct DynamicsEval {
    T ds_dt, dn_dt, dbeta_dt, du_dt, dv_dt, ddelta_dt, domega_f_dt, domega_r_dt;
    T lambda_f, lambda_r, alpha_f, alpha_r;
    T f_vf, f_vr, f_uf, f_ur;
};

// No speed or projection checks; callers guarantee v >= kSpeedFloor.
template <typename T>
DynamicsEval<T> evaluate_dynamics(const T& n, const T& beta, const T& u, const T& v, const T& delta,
                                  const T& omega_f, const T& omega_r, const T& torque_f, const T& torque_r,
                                  const T& sigma, const VehicleParams& p, const TireModel& front,
                                  const TireModel& rear, double tau) {
    using std::cos;
    using std::sin;
    const double wheelbase = p.l_f + p.l_r;
    const double load_f = p.m * p.g * p.l_r / wheelbase;
    const double load_r = p.m * p.g * p.l_f / wheelbase;

    DynamicsEval<T> e;
    e.lambda_f = (p.r_e * omega_f - v) / v;
    e.lambda_r = (p.r_e * omega_r - v) / v;
    e.alpha_f = sigma - (u + p.l_f * delta) / v;
    e.alpha_r = -(u - p.l_r * delta) / v;
    e.f_vf = load_f * magic_formula(front.longitudinal, e.lambda_f, front.zeta);
    e.f_vr = load_r * magic_formula(rear.longitudinal, e.lambda_r, rear.zeta);
    e.f_uf = load_f * magic_formula(front.lateral, e.alpha_f, front.zeta);
    e.f_ur = load_r * magic_formula(rear.lateral, e.alpha_r, rear.zeta);

    const T cs = cos(sigma);
    const T sn = sin(sigma);
    e.dv_dt = (e.f_vr + e.f_vf * cs - e.f_uf * sn - p.c_d * v * v) / p.m + u * delta;
    e.du_dt = (e.f_ur + e.f_vf * sn + e.f_uf * cs) / p.m - v * delta;
    e.ddelta_dt = (-e.f_ur * p.l_r + p.l_f * (e.f_vf * sn + e.f_uf * cs)) / p.i_z;
    e.domega_f_dt = (torque_f - e.f_vf * p.r_e) / p.j_wheel;
    e.domega_r_dt = (torque_r - e.f_vr * p.r_e) / p.j_wheel;

    const T cb = cos(beta);
    const T sb = sin(beta);
    e.ds_dt = (v * cb - u * sb) / (1.0 + n * tau);
    e.dn_dt = u * cb + v * sb;
    e.dbeta_dt = delta - tau * e.ds_dt;
    return e;
}

// Throws DegenerateSpeed for v < kSpeedFloor, SingularProjection when |1 + n tau| <= 1e-6.
TimeRates time_derivatives(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                           const TireModel& front, const TireModel& rear, double tau);

// Tire forces and slips at the given state and input. Throws DegenerateSpeed.
struct ForceReport {
    AxleForces forces;
    double lambda_f = 0.0;
    double lambda_r = 0.0;
    double alpha_f = 0.0;
    double alpha_r = 0.0;
};
ForceReport force_report(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                         const TireModel& front, const TireModel& rear);

// Divides every rate by ds/dt. Throws StalledOnPath when ds/dt <= 1e-6.
StateDerivative path_derivative(const TimeRates& rates);
StateDerivative state_derivative(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                                 const TireModel& front, const TireModel& rear, const Path& path, double s);

VehicleState step(const VehicleState& x, const StateDerivative& d, double delta_s);

struct Trajectory {
    double delta_s = 0.0;
    std::vector<double> s;                 // d + 1 stations
    std::vector<VehicleState> states;      // d + 1
    std::vector<ControlInput> inputs;      // d + 1, the last repeats the final control
    std::vector<ForceReport> forces;       // d + 1
    size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
};

// Forward-Euler propagation over controls.size() steps of length delta_s.
// Solver errors are rethrown with the failing step index in the message.
Trajectory simulate(const VehicleState& initial, const std::vector<ControlInput>& controls, const Path& path,
                    const VehicleParams& p, const TireModel& front, const TireModel& rear, double delta_s);

}  // namespace twsim
