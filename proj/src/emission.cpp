#include "twsim/emission.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_min.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "twsim/error.hpp"

namespace twsim {

void EmissionParams::validate() const {
    if (!(p2 > 0.0) || !std::isfinite(p1) || !std::isfinite(p0)) {
        throw Error(ErrorKind::InvalidInput, "emission curve must be convex (p2 > 0) with finite coefficients");
    }
    // small slack for coefficients that sit exactly on the boundary
    if (minimum_value() < -1e-9 * std::max(1.0, std::abs(p0))) {
        throw Error(ErrorKind::InvalidInput, "emission curve dips below zero");
    }
}

EmissionParams reference_soft_emission() { return {1.98e-3, -1.50, 286.04}; }

EmissionParams reference_hard_emission() { return scale_emission(reference_soft_emission(), 0.25); }

double particle_number(double f_v, const EmissionParams& p) { return (p.p2 * f_v + p.p1) * f_v + p.p0; }

EmissionParams scale_emission(const EmissionParams& p, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) {
        throw Error(ErrorKind::InvalidInput, "emission ratio must lie in (0, 1]");
    }
    return {rho * p.p2, rho * p.p1, rho * p.p0};
}

double treadwear_to_mu(double w) {
    if (!(w > 0.0)) {
        throw Error(ErrorKind::InvalidInput, "treadwear rating must be positive");
    }
    return kTreadwearScale * std::pow(w, -kTreadwearExponent);
}

double emission_ratio_from_mu(double mu_h, double mu_s) {
    if (!(mu_h > 0.0) || !(mu_h <= mu_s)) {
        throw Error(ErrorKind::InvalidInput, "need 0 < mu_h <= mu_s");
    }
    return std::pow(mu_h / mu_s, kEmissionRatioExponent);
}

double aero_constant(double air_density, double drag_coefficient, double frontal_area, double mass, double g) {
    return air_density * drag_coefficient * frontal_area / (mass * g);
}

double stopping_distance(double v, double mu_max, double f_r, double k, double g) {
    const double grip = 2.0 * (mu_max + f_r);
    if (!(v > 0.0) || !(grip > 0.0) || !(k > 0.0)) {
        throw Error(ErrorKind::InvalidInput, "stopping distance needs v > 0, mu + f_r > 0, K > 0");
    }
    return std::log1p(k * v * v / grip) / (k * g);
}

double stopping_distance_approx(double v, double mu_max, double f_r, double g) {
    return v * v / (2.0 * (mu_max + f_r) * g);
}

double mu_from_stopping(double v, double d, double k, double f_r, double g) {
    if (!(v > 0.0) || !(d > 0.0) || !(k > 0.0)) {
        throw Error(ErrorKind::InvalidInput, "friction estimate needs v > 0, d > 0, K > 0");
    }
    return k * v * v / (2.0 * std::expm1(k * g * d)) - f_r;
}

double fleet_mu_max(const TireModel& front, const TireModel& rear, const VehicleParams& params) {
    const double peak_f = peak_friction(front.longitudinal, front.zeta, 1.0);
    const double peak_r = peak_friction(rear.longitudinal, rear.zeta, 1.0);
    return (params.l_r * peak_f + params.l_f * peak_r) / params.wheelbase();
}

double peak_lateral_acceleration(const TireModel& front, const TireModel& rear, double g) {
    const double peak_f = peak_friction(front.lateral, front.zeta, 0.5);
    const double peak_r = peak_friction(rear.lateral, rear.zeta, 0.5);
    return g * std::min(peak_f, peak_r);
}

namespace {

// Samples mapped to x = F / sx, y = PN / sy so the fit works on O(1) numbers.
struct Scaled {
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    double sx = 1.0;
    double sy = 1.0;
};

Scaled scale_samples(std::span<const EmissionSample> samples) {
    Scaled s;
    const auto n = static_cast<Eigen::Index>(samples.size());
    s.x.resize(n);
    s.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        s.sx = std::max(s.sx, std::abs(samples[i].force));
        s.sy = std::max(s.sy, std::abs(samples[i].pn));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        s.x(i) = samples[i].force / s.sx;
        s.y(i) = samples[i].pn / s.sy;
    }
    return s;
}

// Best a for the touching parabola a (x - c)^2 and its residual sum of squares.
std::pair<double, double> touching_fit(const Scaled& s, double c) {
    const Eigen::ArrayXd q = (s.x.array() - c).square();
    const double denom = q.square().sum();
    const double a = denom > 0.0 ? std::max(0.0, (q * s.y.array()).sum() / denom) : 0.0;
    return {a, (a * q - s.y.array()).square().sum()};
}

double touching_sse(double c, void* data) { return touching_fit(*static_cast<const Scaled*>(data), c).second; }

struct MinimizerDeleter {
    void operator()(gsl_min_fminimizer* m) const { gsl_min_fminimizer_free(m); }
};

}  // namespace

EmissionFit fit_emission_quadratic(std::span<const EmissionSample> samples) {
    if (samples.size() < 4) {
        throw Error(ErrorKind::InvalidInput, "emission fit needs at least 4 samples");
    }
    const Scaled s = scale_samples(samples);
    const auto n = s.x.size();

    Eigen::MatrixXd v(n, 3);
    v.col(0) = s.x.array().square();
    v.col(1) = s.x;
    v.col(2).setOnes();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(v);
    if (qr.rank() < 3) {
        throw Error(ErrorKind::FitDiverged, "emission samples need at least three distinct forces");
    }
    Eigen::Vector3d q = qr.solve(s.y);

    EmissionFit fit;
    const double min_scaled = q(2) - q(1) * q(1) / (4.0 * q(0));
    if (!(q(0) > 0.0) || min_scaled < 0.0) {
        // Optimum lies on the boundary min PN = 0: PN = a (x - c)^2.
        gsl_set_error_handler_off();
        Scaled data = s;
        const double lo_x = s.x.minCoeff();
        const double hi_x = s.x.maxCoeff();
        const double span = hi_x - lo_x;
        const double lo = lo_x - 2.0 * span;
        const double hi = hi_x + 2.0 * span;
        constexpr int kGrid = 4000;
        int best_k = 0;
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= kGrid; ++k) {
            const double val = touching_sse(lo + (hi - lo) * k / kGrid, &data);
            if (val < best) {
                best = val;
                best_k = k;
            }
        }
        const double h = (hi - lo) / kGrid;
        double c = lo + h * best_k;
        if (best_k > 0 && best_k < kGrid) {
            gsl_function fn{&touching_sse, &data};
            std::unique_ptr<gsl_min_fminimizer, MinimizerDeleter> m(gsl_min_fminimizer_alloc(gsl_min_fminimizer_brent));
            if (gsl_min_fminimizer_set(m.get(), &fn, c, c - h, c + h) == GSL_SUCCESS) {
                for (int it = 0; it < 200; ++it) {
                    gsl_min_fminimizer_iterate(m.get());
                    const double a = gsl_min_fminimizer_x_lower(m.get());
                    const double b = gsl_min_fminimizer_x_upper(m.get());
                    if (gsl_min_test_interval(a, b, 1e-14, 0.0) == GSL_SUCCESS) {
                        break;
                    }
                }
                c = gsl_min_fminimizer_x_minimum(m.get());
            }
        }
        const double a = touching_fit(s, c).first;
        if (!(a > 0.0)) {
            throw Error(ErrorKind::FitDiverged, "no convex nonnegative quadratic fits the samples");
        }
        q = Eigen::Vector3d(a, -2.0 * a * c, a * c * c);
        fit.constraint_active = true;

        // Stationarity of the Lagrangian in scaled coefficients:
        // grad f = lambda grad h with h = q0 - q1^2 / (4 q2) and lambda >= 0.
        const Eigen::VectorXd r = v * q - s.y;
        const Eigen::Vector3d grad_f = 2.0 * v.transpose() * r / static_cast<double>(n);
        const Eigen::Vector3d grad_h(q(1) * q(1) / (4.0 * q(0) * q(0)), -q(1) / (2.0 * q(0)), 1.0);
        const double lambda = std::max(0.0, grad_f.dot(grad_h) / grad_h.squaredNorm());
        fit.kkt_residual = (grad_f - lambda * grad_h).norm();
    }

    const Eigen::VectorXd r = v * q - s.y;
    const double mean = s.y.mean();
    const double sst = (s.y.array() - mean).square().sum();
    fit.r_squared = sst > 0.0 ? 1.0 - r.squaredNorm() / sst : 1.0;
    fit.params = {q(0) * s.sy / (s.sx * s.sx), q(1) * s.sy / s.sx, q(2) * s.sy};
    if (fit.constraint_active) {
        // exact zero minimum after unscaling
        fit.params.p0 = fit.params.p1 * fit.params.p1 / (4.0 * fit.params.p2);
    }
    return fit;
}

EmissionSeries trajectory_emission(std::span<const double> f_vf, std::span<const double> f_vr,
                                   std::span<const double> dt, const EmissionParams& p_front,
                                   const EmissionParams& p_rear) {
    if (f_vf.size() != f_vr.size() || f_vf.size() != dt.size()) {
        throw Error(ErrorKind::InvalidInput, "force and time-step series differ in length");
    }
    EmissionSeries out;
    out.front.reserve(f_vf.size());
    out.rear.reserve(f_vf.size());
    for (size_t i = 0; i < f_vf.size(); ++i) {
        const double pf = particle_number(f_vf[i], p_front);
        const double pr = particle_number(f_vr[i], p_rear);
        out.front.push_back(pf);
        out.rear.push_back(pr);
        out.total_unweighted += pf + pr;
        out.total_weighted += (pf + pr) * dt[i];
    }
    return out;
}

}  // namespace twsim
