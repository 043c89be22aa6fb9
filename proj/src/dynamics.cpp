#include "twsim/dynamics.hpp"

#include <cmath>
#include <string>

#include "twsim/error.hpp"

namespace twsim {

Path::Path(std::vector<PathSegment> segments) : segments_(std::move(segments)) {
    if (segments_.empty()) {
        throw Error(ErrorKind::InvalidInput, "path needs at least one segment");
    }
    for (const auto& seg : segments_) {
        if (!(seg.length > 0.0)) {
            throw Error(ErrorKind::InvalidInput, "segment length must be positive");
        }
        if (seg.kind == SegmentKind::Arc && !(seg.radius > 0.0)) {
            throw Error(ErrorKind::InvalidInput, "arc radius must be positive");
        }
        total_ += seg.length;
    }
}

Path Path::straight(double length) { return Path({PathSegment{SegmentKind::Straight, length}}); }

Path Path::straight_arc_straight(double lead, double arc_length, double radius, TurnDirection dir, double tail) {
    return Path({PathSegment{SegmentKind::Straight, lead}, PathSegment{SegmentKind::Arc, arc_length, radius, dir},
                 PathSegment{SegmentKind::Straight, tail}});
}

double Path::curvature(double s) const {
    if (!(s >= 0.0) || s > total_) {
        throw Error(ErrorKind::OutOfPath, "station " + std::to_string(s) + " outside [0, " + std::to_string(total_) + "]");
    }
    double start = 0.0;
    for (const auto& seg : segments_) {
        const double end = start + seg.length;
        if (s < end || &seg == &segments_.back()) {
            if (seg.kind == SegmentKind::Straight) {
                return 0.0;
            }
            return seg.direction == TurnDirection::Left ? -1.0 / seg.radius : 1.0 / seg.radius;
        }
        start = end;
    }
    return 0.0;
}

VehicleState VehicleState::rolling(double v, double r_e) {
    VehicleState x;
    x.v = v;
    x.omega_f = v / r_e;
    x.omega_r = v / r_e;
    return x;
}

namespace {

void require_speed(double v) {
    if (!(v >= kSpeedFloor)) {
        throw Error(ErrorKind::DegenerateSpeed, "speed " + std::to_string(v) + " m/s below floor");
    }
}

}  // namespace

TimeRates time_derivatives(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                           const TireModel& front, const TireModel& rear, double tau) {
    require_speed(x.v);
    if (!(std::abs(1.0 + x.n * tau) > 1e-6)) {
        throw Error(ErrorKind::SingularProjection, "vehicle at the centre of path curvature");
    }
    const auto e = evaluate_dynamics(x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, in.torque_f, in.torque_r,
                                     in.sigma, p, front, rear, tau);
    return {e.ds_dt, e.dn_dt, e.dbeta_dt, e.du_dt, e.dv_dt, e.ddelta_dt, e.domega_f_dt, e.domega_r_dt};
}

ForceReport force_report(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                         const TireModel& front, const TireModel& rear) {
    require_speed(x.v);
    const auto e = evaluate_dynamics(x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, in.torque_f, in.torque_r,
                                     in.sigma, p, front, rear, 0.0);
    return {{e.f_vf, e.f_vr, e.f_uf, e.f_ur}, e.lambda_f, e.lambda_r, e.alpha_f, e.alpha_r};
}

StateDerivative path_derivative(const TimeRates& r) {
    if (!(r.ds_dt > 1e-6)) {
        throw Error(ErrorKind::StalledOnPath, "ds/dt = " + std::to_string(r.ds_dt));
    }
    const double inv = 1.0 / r.ds_dt;
    return {inv, r.dn_dt * inv, r.dbeta_dt * inv, r.du_dt * inv, r.dv_dt * inv, r.ddelta_dt * inv,
            r.domega_f_dt * inv, r.domega_r_dt * inv};
}

StateDerivative state_derivative(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                                 const TireModel& front, const TireModel& rear, const Path& path, double s) {
    return path_derivative(time_derivatives(x, in, p, front, rear, path.curvature(s)));
}

VehicleState step(const VehicleState& x, const StateDerivative& d, double delta_s) {
    return {x.t + delta_s * d.dt_ds,       x.n + delta_s * d.dn_ds,       x.beta + delta_s * d.dbeta_ds,
            x.u + delta_s * d.du_ds,       x.v + delta_s * d.dv_ds,       x.delta + delta_s * d.ddelta_ds,
            x.omega_f + delta_s * d.domega_f_ds, x.omega_r + delta_s * d.domega_r_ds};
}

Trajectory simulate(const VehicleState& initial, const std::vector<ControlInput>& controls, const Path& path,
                    const VehicleParams& p, const TireModel& front, const TireModel& rear, double delta_s) {
    if (!(delta_s > 0.0) || controls.empty()) {
        throw Error(ErrorKind::InvalidInput, "simulation needs delta_s > 0 and at least one control");
    }
    Trajectory traj;
    traj.delta_s = delta_s;
    const size_t d = controls.size();
    traj.s.reserve(d + 1);
    traj.states.reserve(d + 1);
    traj.inputs.reserve(d + 1);
    traj.forces.reserve(d + 1);
    VehicleState x = initial;
    for (size_t i = 0; i <= d; ++i) {
        const double s = std::min(static_cast<double>(i) * delta_s, path.total_length());
        const ControlInput& in = controls[std::min(i, d - 1)];
        try {
            traj.forces.push_back(force_report(x, in, p, front, rear));
            traj.s.push_back(s);
            traj.states.push_back(x);
            traj.inputs.push_back(in);
            if (i < d) {
                x = step(x, state_derivative(x, in, p, front, rear, path, s), delta_s);
            }
        } catch (const Error& e) {
            throw Error(e.kind(), "step " + std::to_string(i) + ": " + e.what());
        }
    }
    return traj;
}

}  // namespace twsim
