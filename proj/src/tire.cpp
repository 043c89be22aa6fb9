#include "twsim/tire.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <array>
#include <limits>
#include <memory>
#include <string>

#include "twsim/error.hpp"

namespace twsim {

namespace {

// Soft compound peak friction. Chosen so that braking at the soft operating
// slip limit decelerates the test vehicle at about 1.1 g on a dry road.
constexpr double kSoftPeak = 1.3;
constexpr double kHardToSoftPeakRatio = 0.83;

constexpr double kSoftSlipRatioLimit = 0.034;
constexpr double kSoftSlipAngleLimit = 0.041;
constexpr double kHardSlipRatioLimit = 0.057;
constexpr double kHardSlipAngleLimit = 0.073;

constexpr double kLongitudinalShape = 1.9;
constexpr double kLongitudinalCurvature = 0.97;
constexpr double kLateralShape = 1.3;
constexpr double kLateralCurvature = 0.0;

void require_speed(double v) {
    if (!(v >= kSpeedFloor)) {
        throw Error(ErrorKind::DegenerateSpeed,
                    "speed " + std::to_string(v) + " m/s below floor " + std::to_string(kSpeedFloor));
    }
}

TireModel make_reference(double peak, double ratio_limit, double angle_limit) {
    TireModel t;
    t.longitudinal = {calibrate_stiffness(kLongitudinalShape, kLongitudinalCurvature, ratio_limit),
                      kLongitudinalShape, peak, kLongitudinalCurvature};
    t.lateral = {calibrate_stiffness(kLateralShape, kLateralCurvature, angle_limit), kLateralShape, peak,
                 kLateralCurvature};
    t.zeta = 1.0;
    t.slip_ratio_limit = ratio_limit;
    t.slip_angle_limit = angle_limit;
    return t;
}

}  // namespace

void VehicleParams::validate() const {
    const std::array<double, 8> values{m, g, i_z, c_d, r_e, j_wheel, l_f, l_r};
    for (double x : values) {
        if (!(x > 0.0) || !std::isfinite(x)) {
            throw Error(ErrorKind::InvalidInput, "vehicle constants must be finite and strictly positive");
        }
    }
}

void TireModel::validate() const {
    if (!longitudinal.valid() || !lateral.valid()) {
        throw Error(ErrorKind::InvalidInput, "magic formula coefficients require B > 0, C > 1, D > 0");
    }
    if (!(zeta > 0.0 && zeta <= 1.0)) {
        throw Error(ErrorKind::InvalidInput, "condition scaling zeta must lie in (0, 1]");
    }
    if (!(slip_ratio_limit > 0.0) || !(slip_angle_limit > 0.0)) {
        throw Error(ErrorKind::InvalidInput, "slip limits must be positive");
    }
    if (slip_ratio_limit >= slip_at_peak(longitudinal, 1.0) || slip_angle_limit >= slip_at_peak(lateral, 0.5)) {
        throw Error(ErrorKind::InvalidInput, "slip limits must lie below the slip at peak friction");
    }
}

TireModel TireModel::with_zeta(double z) const {
    TireModel t = *this;
    t.zeta = z;
    return t;
}

double mf_eval(const MagicFormulaCoeffs& coeffs, double slip, double zeta) {
    return magic_formula(coeffs, slip, zeta);
}

double slip_ratio(double r_e, double omega, double v) {
    require_speed(v);
    return (r_e * omega - v) / v;
}

SlipAngles slip_angles(double sigma, double u, double v, double delta, double l_f, double l_r) {
    require_speed(v);
    return {sigma - (u + l_f * delta) / v, -(u - l_r * delta) / v};
}

AxleLoads axle_loads(const VehicleParams& p) {
    const double weight = p.m * p.g;
    const double base = p.l_f + p.l_r;
    return {weight * p.l_r / base, weight * p.l_f / base};
}

AxleForces axle_forces(const VehicleParams& params, const TireModel& front, const TireModel& rear,
                       double lambda_f, double lambda_r, double alpha_f, double alpha_r) {
    const AxleLoads loads = axle_loads(params);
    return {loads.front_normal * mf_eval(front.longitudinal, lambda_f, front.zeta),
            loads.rear_normal * mf_eval(rear.longitudinal, lambda_r, rear.zeta),
            loads.front_normal * mf_eval(front.lateral, alpha_f, front.zeta),
            loads.rear_normal * mf_eval(rear.lateral, alpha_r, rear.zeta)};
}

double slip_at_peak(const MagicFormulaCoeffs& coeffs, double slip_max) {
    constexpr int kGrid = 20000;
    double best_s = 0.0;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k <= kGrid; ++k) {
        const double s = slip_max * k / kGrid;
        const double val = mf_eval(coeffs, s, 1.0);
        if (val > best) {
            best = val;
            best_s = s;
        }
    }
    // golden-section refinement inside the bracketing grid cell pair
    const double h = slip_max / kGrid;
    double lo = std::max(0.0, best_s - h);
    double hi = std::min(slip_max, best_s + h);
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 80; ++it) {
        const double a = hi - ratio * (hi - lo);
        const double b = lo + ratio * (hi - lo);
        if (mf_eval(coeffs, a, 1.0) > mf_eval(coeffs, b, 1.0)) {
            hi = b;
        } else {
            lo = a;
        }
    }
    return 0.5 * (lo + hi);
}

double peak_friction(const MagicFormulaCoeffs& coeffs, double zeta, double slip_max) {
    return mf_eval(coeffs, slip_at_peak(coeffs, slip_max), zeta);
}

double longitudinal_force_limit(const TireModel& tire, double normal_load) {
    return normal_load * mf_eval(tire.longitudinal, tire.slip_ratio_limit, tire.zeta);
}

double lateral_force_limit(const TireModel& tire, double normal_load) {
    return normal_load * mf_eval(tire.lateral, tire.slip_angle_limit, tire.zeta);
}

double calibrate_stiffness(double C, double E, double slip_limit, double fraction) {
    if (!(C > 1.0) || !(slip_limit > 0.0) || !(fraction > 0.0 && fraction < 1.0)) {
        throw Error(ErrorKind::InvalidInput, "calibration needs C > 1, positive slip limit, fraction in (0, 1)");
    }
    // Rising branch: C * atan(phi) = asin(fraction) with phi = x - E (x - atan x), x = B s.
    const double phi_target = std::tan(std::asin(fraction) / C);
    auto phi = [E](double x) { return x - E * (x - std::atan(x)); };
    double lo = 0.0;
    double hi = 1.0;
    while (phi(hi) < phi_target) {
        hi *= 2.0;
        if (hi > 1e8) {
            throw Error(ErrorKind::InvalidInput, "curvature factor prevents reaching the target fraction");
        }
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (phi(mid) < phi_target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi) / slip_limit;
}

TireModel reference_soft_tire() {
    return make_reference(kSoftPeak, kSoftSlipRatioLimit, kSoftSlipAngleLimit);
}

TireModel reference_hard_tire() {
    return make_reference(kSoftPeak * kHardToSoftPeakRatio, kHardSlipRatioLimit, kHardSlipAngleLimit);
}

namespace {

struct FitData {
    std::span<const SlipSample> samples;
    int evaluations = 0;
};

double sum_squares(const MagicFormulaCoeffs& c, std::span<const SlipSample> samples) {
    double sse = 0.0;
    for (const auto& s : samples) {
        const double r = mf_eval(c, s.slip, 1.0) - s.mu;
        sse += r * r;
    }
    return sse;
}

double fit_objective(const gsl_vector* x, void* params) {
    auto* data = static_cast<FitData*>(params);
    ++data->evaluations;
    const MagicFormulaCoeffs c{gsl_vector_get(x, 0), gsl_vector_get(x, 1), gsl_vector_get(x, 2),
                               gsl_vector_get(x, 3)};
    if (!c.valid() || c.C > 3.0 || c.E > 1.0) {
        return 1e30;
    }
    return sum_squares(c, data->samples);
}

struct SimplexDeleter {
    void operator()(gsl_multimin_fminimizer* s) const { gsl_multimin_fminimizer_free(s); }
};
struct VectorDeleter {
    void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};

// One simplex descent from `start`; returns the best coefficients found.
MagicFormulaCoeffs simplex_descent(const MagicFormulaCoeffs& start, FitData& data, int budget) {
    constexpr size_t kDim = 4;
    std::unique_ptr<gsl_vector, VectorDeleter> x(gsl_vector_alloc(kDim));
    std::unique_ptr<gsl_vector, VectorDeleter> step(gsl_vector_alloc(kDim));
    gsl_vector_set(x.get(), 0, start.B);
    gsl_vector_set(x.get(), 1, start.C);
    gsl_vector_set(x.get(), 2, start.D);
    gsl_vector_set(x.get(), 3, start.E);
    gsl_vector_set(step.get(), 0, 0.2 * start.B);
    gsl_vector_set(step.get(), 1, 0.1);
    gsl_vector_set(step.get(), 2, 0.05 * start.D);
    gsl_vector_set(step.get(), 3, 0.1);

    gsl_multimin_function fn{&fit_objective, kDim, &data};
    std::unique_ptr<gsl_multimin_fminimizer, SimplexDeleter> solver(
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, kDim));
    gsl_multimin_fminimizer_set(solver.get(), &fn, x.get(), step.get());
    for (int it = 0; it < budget; ++it) {
        if (gsl_multimin_fminimizer_iterate(solver.get()) != GSL_SUCCESS) {
            break;
        }
        if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(solver.get()), 1e-13) == GSL_SUCCESS) {
            break;
        }
    }
    const gsl_vector* best = gsl_multimin_fminimizer_x(solver.get());
    return {gsl_vector_get(best, 0), gsl_vector_get(best, 1), gsl_vector_get(best, 2), gsl_vector_get(best, 3)};
}

}  // namespace

MagicFormulaFit fit_magic_formula(std::span<const SlipSample> samples) {
    if (samples.size() < 8) {
        throw Error(ErrorKind::InvalidInput, "magic formula fit needs at least 8 samples");
    }
    gsl_set_error_handler_off();

    double mu_max = 0.0;
    double slip_at_max = 0.0;
    for (const auto& s : samples) {
        if (std::abs(s.mu) > mu_max) {
            mu_max = std::abs(s.mu);
            slip_at_max = std::abs(s.slip);
        }
    }
    if (!(mu_max > 0.0) || !(slip_at_max > 0.0)) {
        throw Error(ErrorKind::FitDiverged, "samples carry no friction signal");
    }

    FitData data{samples};
    constexpr int kBudget = 10000;
    // Starts over (C, E); B places the start peak at the observed peak slip.
    constexpr std::array<std::array<double, 2>, 5> kStarts{{{1.9, 0.5}, {1.5, 0.0}, {1.3, -0.5}, {2.2, 0.9}, {1.7, 0.3}}};
    MagicFormulaCoeffs best;
    double best_sse = std::numeric_limits<double>::infinity();
    for (const auto& [c0, e0] : kStarts) {
        MagicFormulaCoeffs start{1.0, c0, mu_max, e0};
        start.B = std::max(1e-3, slip_at_peak({1.0, c0, 1.0, e0}, 100.0) / slip_at_max);
        MagicFormulaCoeffs cand = simplex_descent(start, data, kBudget);
        // restart from the converged point to escape a collapsed simplex
        cand = simplex_descent(cand, data, kBudget);
        const double sse = cand.valid() ? sum_squares(cand, samples) : std::numeric_limits<double>::infinity();
        if (sse < best_sse) {
            best_sse = sse;
            best = cand;
        }
    }

    MagicFormulaFit fit;
    fit.coeffs = best;
    fit.rms = std::sqrt(best_sse / static_cast<double>(samples.size()));
    fit.evaluations = data.evaluations;
    if (!best.valid() || !(fit.rms <= 0.05)) {
        throw Error(ErrorKind::FitDiverged, "residual RMS " + std::to_string(fit.rms) + " exceeds 0.05");
    }
    return fit;
}

}  // namespace twsim
