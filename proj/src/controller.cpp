#include "twsim/controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "twsim/error.hpp"

namespace twsim {

namespace {

void require_speed(double v) {
    if (!(v >= kSpeedFloor)) {
        throw Error(ErrorKind::DegenerateSpeed, "measured speed " + std::to_string(v) + " m/s below floor");
    }
}

void require_steering(double angle, double sigma_eps) {
    if (!(std::abs(std::sin(angle)) >= sigma_eps)) {
        throw Error(ErrorKind::SingularSteering, "|sin(" + std::to_string(angle) + ")| below threshold");
    }
}

// Right-hand sides of the longitudinal and lateral balance of the measured motion.
double longitudinal_demand(const Measurements& m, const VehicleParams& p) {
    return p.m * m.dv_dt - p.m * m.u * m.delta + p.c_d * m.v * m.v;
}

double lateral_demand(const Measurements& m, const VehicleParams& p) { return p.m * m.du_dt + p.m * m.v * m.delta; }

}  // namespace

std::pair<double, double> estimate_base_lateral(const Measurements& meas, const VehicleParams& params,
                                                const MagicFormulaCoeffs& soft_lateral, double zeta) {
    require_speed(meas.v);
    const AxleLoads loads = axle_loads(params);
    const SlipAngles alpha = slip_angles(meas.sigma, meas.u, meas.v, meas.delta, params.l_f, params.l_r);
    return {loads.front_normal * mf_eval(soft_lateral, alpha.front, zeta),
            loads.rear_normal * mf_eval(soft_lateral, alpha.rear, zeta)};
}

std::pair<double, double> estimate_base_longitudinal(const Measurements& meas, const VehicleParams& params,
                                                     double f_uf_hat, double f_ur_hat, double sigma_eps,
                                                     EstimateForm form) {
    require_steering(meas.sigma, sigma_eps);
    const double s = std::sin(meas.sigma);
    const double c = std::cos(meas.sigma);
    const double lateral = lateral_demand(meas, params) - f_ur_hat - f_uf_hat * c;
    const double f_vf = form == EstimateForm::Equation ? lateral / s : lateral;
    const double f_vr = longitudinal_demand(meas, params) + f_uf_hat * s - f_vf * c;
    return {f_vr, f_vf};
}

BaseForces estimate_base_forces(const Measurements& meas, const VehicleParams& params, const TireModel& soft,
                                const ControllerConfig& config) {
    BaseForces b;
    std::tie(b.f_uf_hat, b.f_ur_hat) = estimate_base_lateral(meas, params, soft.lateral, soft.zeta);
    std::tie(b.f_vr_hat, b.f_vf_hat) =
        estimate_base_longitudinal(meas, params, b.f_uf_hat, b.f_ur_hat, config.sigma_eps, config.form);
    return b;
}

double optimal_front_force(double f_total, const EmissionParams& p_hard, const EmissionParams& p_soft) {
    return (2.0 * p_soft.p2 * f_total + p_soft.p1 - p_hard.p1) / (2.0 * (p_hard.p2 + p_soft.p2));
}

SplitResult straight_split(const Measurements& meas, const VehicleParams& params, const EmissionParams& p_hard,
                           const EmissionParams& p_soft, double front_limit, double rear_limit) {
    const double total = params.m * meas.dv_dt + params.c_d * meas.v * meas.v;
    SplitResult r;
    const double lo = std::max(-front_limit, total - rear_limit);
    const double hi = std::min(front_limit, total + rear_limit);
    const double best = optimal_front_force(total, p_hard, p_soft);
    if (lo > hi) {
        r.infeasible_total = true;
        r.clamped = true;
        r.f_vf = std::copysign(front_limit, total);
        r.f_vr = std::copysign(rear_limit, total);
        return r;
    }
    r.f_vf = std::clamp(best, lo, hi);
    r.clamped = r.f_vf != best;
    r.f_vr = total - r.f_vf;
    return r;
}

double low_wear_front_lateral(const Measurements& meas, double delta_sigma, const VehicleParams& params,
                              const MagicFormulaCoeffs& hard_lateral, double zeta) {
    require_speed(meas.v);
    const SlipAngles alpha = slip_angles(meas.sigma + delta_sigma, meas.u, meas.v, meas.delta, params.l_f, params.l_r);
    return axle_loads(params).front_normal * mf_eval(hard_lateral, alpha.front, zeta);
}

std::pair<double, double> forces_for_delta_sigma(const Measurements& meas, double delta_sigma,
                                                 const BaseForces& base, double f_uf, const VehicleParams& params,
                                                 double sigma_eps) {
    const double angle = meas.sigma + delta_sigma;
    require_steering(angle, sigma_eps);
    const double s = std::sin(angle);
    const double c = std::cos(angle);
    const double lateral = base.f_vf_hat * std::sin(meas.sigma) + base.f_uf_hat * std::cos(meas.sigma);
    const double f_vf = (lateral - f_uf * c) / s;
    const double f_vr = longitudinal_demand(meas, params) + f_uf * s - f_vf * c;
    return {f_vf, f_vr};
}

double estimate_pn(const Measurements& meas, double delta_sigma, const VehicleParams& params, const DualTires& tires,
                   const DualEmission& emission, const ControllerConfig& config) {
    const BaseForces base = estimate_base_forces(meas, params, tires.soft, config);
    const double f_uf = low_wear_front_lateral(meas, delta_sigma, params, tires.hard.lateral, tires.hard.zeta);
    const auto [f_vf, f_vr] = forces_for_delta_sigma(meas, delta_sigma, base, f_uf, params, config.sigma_eps);
    return particle_number(f_vf, emission.hard) + particle_number(f_vr, emission.soft);
}

double admissible_pn(const Measurements& meas, double delta_sigma, const VehicleParams& params,
                     const DualTires& tires, const DualEmission& emission, const ControllerConfig& config,
                     const BaseForces& base) {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    const double angle = meas.sigma + delta_sigma;
    if (std::abs(std::sin(angle)) < config.sigma_eps) {
        return kInf;
    }
    const double alpha = angle - (meas.u + params.l_f * meas.delta) / meas.v;
    if (std::abs(alpha) > tires.hard.slip_angle_limit) {
        return kInf;
    }
    const double f_uf = low_wear_front_lateral(meas, delta_sigma, params, tires.hard.lateral, tires.hard.zeta);
    const auto [f_vf, f_vr] = forces_for_delta_sigma(meas, delta_sigma, base, f_uf, params, config.sigma_eps);
    return particle_number(f_vf, emission.hard) + particle_number(f_vr, emission.soft);
}

SteeringSearch optimize_steering(const Measurements& meas, const VehicleParams& params, const DualTires& tires,
                                 const DualEmission& emission, const ControllerConfig& config) {
    require_steering(meas.sigma, config.sigma_eps);
    const BaseForces base = estimate_base_forces(meas, params, tires.soft, config);
    auto pn = [&](double ds) { return admissible_pn(meas, ds, params, tires, emission, config, base); };

    SteeringSearch out;
    double x = 0.0;
    double fx = pn(x);
    out.evaluations = 1;
    double eps = config.eps_start;
    while (eps >= config.eps_min) {
        const double f_plus = pn(x + eps);
        const double f_minus = pn(x - eps);
        out.evaluations += 2;
        if (f_plus < fx && f_plus <= f_minus) {
            x += eps;
            fx = f_plus;
            ++out.moves;
        } else if (f_minus < fx) {
            x -= eps;
            fx = f_minus;
            ++out.moves;
        } else {
            // the last trial step is exactly eps_min so the result certifies at that resolution
            eps = eps > config.eps_min ? std::max(eps / 2.0, config.eps_min) : eps / 2.0;
            ++out.halvings;
            continue;
        }
        if (std::abs(x) > config.search_bound) {
            out.aborted = true;
            out.delta_sigma = 0.0;
            out.pn = pn(0.0);
            ++out.evaluations;
            return out;
        }
    }
    out.delta_sigma = x;
    out.pn = fx;
    return out;
}

ControlDecision control_step(const Measurements& meas, const VehicleParams& params, const DualTires& tires,
                             const DualEmission& emission, const ControllerConfig& config) {
    const AxleLoads loads = axle_loads(params);
    const double front_limit = longitudinal_force_limit(tires.hard, loads.front_normal);
    const double rear_limit = longitudinal_force_limit(tires.soft, loads.rear_normal);

    ControlDecision d;
    auto zero_steering = [&] {
        const SplitResult split = straight_split(meas, params, emission.hard, emission.soft, front_limit, rear_limit);
        d.mode = ControlMode::ZeroSteering;
        d.delta_sigma = 0.0;
        d.f_vf_ref = split.f_vf;
        d.f_vr_ref = split.f_vr;
        d.clamped = split.clamped;
        d.infeasible_total = split.infeasible_total;
        return d;
    };
    if (std::abs(meas.sigma) < config.sigma_eps) {
        return zero_steering();
    }

    BaseForces base;
    SteeringSearch search;
    try {
        base = estimate_base_forces(meas, params, tires.soft, config);
        search = optimize_steering(meas, params, tires, emission, config);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::SingularSteering) throw;
        return zero_steering();
    }
    d.mode = ControlMode::Steering;
    d.search_aborted = search.aborted;
    d.delta_sigma = search.delta_sigma;
    const double applied = meas.sigma + d.delta_sigma;
    if (std::abs(applied) > kMaxSteering) {
        d.delta_sigma = std::copysign(kMaxSteering, applied) - meas.sigma;
        d.clamped = true;
    }

    const double f_uf = low_wear_front_lateral(meas, d.delta_sigma, params, tires.hard.lateral, tires.hard.zeta);
    try {
        std::tie(d.f_vf_ref, d.f_vr_ref) =
            forces_for_delta_sigma(meas, d.delta_sigma, base, f_uf, params, config.sigma_eps);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::SingularSteering) throw;
        return zero_steering();
    }
    const double f_vf = std::clamp(d.f_vf_ref, -front_limit, front_limit);
    const double f_vr = std::clamp(d.f_vr_ref, -rear_limit, rear_limit);
    if (f_vf != d.f_vf_ref || f_vr != d.f_vr_ref) {
        d.clamped = true;
        d.f_vf_ref = f_vf;
        d.f_vr_ref = f_vr;
    }
    return d;
}

}  // namespace twsim
