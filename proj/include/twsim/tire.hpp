#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "twsim/vehicle_params.hpp"

namespace twsim {

// Lowest speed (m/s) at which slip quantities are defined.
inline constexpr double kSpeedFloor = 1.0;

// Fraction of peak friction reached at the operating slip limits.
inline constexpr double kOperatingFraction = 0.85;

struct MagicFormulaCoeffs {
    double B = 0.0;  // stiffness factor
    double C = 0.0;  // shape factor
    double D = 0.0;  // peak factor (friction coefficient)
    double E = 0.0;  // curvature factor

    bool valid() const { return B > 0.0 && C > 1.0 && D > 0.0 && std::isfinite(E); }
};

struct TireModel {
    MagicFormulaCoeffs longitudinal;
    MagicFormulaCoeffs lateral;
    double zeta = 1.0;              // condition scaling
    double slip_ratio_limit = 0.0;  // operating limit on |lambda|
    double slip_angle_limit = 0.0;  // operating limit on |alpha|, rad

    // Throws InvalidInput when the coefficient sets or limits are unusable.
    void validate() const;
    TireModel with_zeta(double z) const;
};

struct AxleLoads {
    double front_normal = 0.0;
    double rear_normal = 0.0;
};

struct AxleForces {
    double f_vf = 0.0;  // front longitudinal
    double f_vr = 0.0;  // rear longitudinal
    double f_uf = 0.0;  // front lateral
    double f_ur = 0.0;  // rear lateral
};

struct SlipAngles {
    double front = 0.0;
    double rear = 0.0;
};

// zeta * D * sin(C * atan(B s - E (B s - atan(B s)))). Templated so the
// transcription can evaluate it on automatic-differentiation scalars.
template <typename T>
T magic_formula(const MagicFormulaCoeffs& c, const T& slip, double zeta) {
    using std::atan;
    using std::sin;
    const T bs = c.B * slip;
    return zeta * c.D * sin(c.C * atan(bs - c.E * (bs - atan(bs))));
}

double mf_eval(const MagicFormulaCoeffs& coeffs, double slip, double zeta);

// Throws DegenerateSpeed when v < kSpeedFloor.
double slip_ratio(double r_e, double omega, double v);

// Small-angle slip angles of the front and rear axle. Throws DegenerateSpeed.
SlipAngles slip_angles(double sigma, double u, double v, double delta, double l_f, double l_r);

AxleLoads axle_loads(const VehicleParams& params);

AxleForces axle_forces(const VehicleParams& params, const TireModel& front, const TireModel& rear,
                       double lambda_f, double lambda_r, double alpha_f, double alpha_r);

// Grid-searched maximum of the curve over [0, slip_max], refined by golden section.
double peak_friction(const MagicFormulaCoeffs& coeffs, double zeta, double slip_max);
double slip_at_peak(const MagicFormulaCoeffs& coeffs, double slip_max);

// Longitudinal / lateral force magnitude an axle can carry at its operating slip limit.
double longitudinal_force_limit(const TireModel& tire, double normal_load);
double lateral_force_limit(const TireModel& tire, double normal_load);

// Stiffness factor B that puts mf_eval at `fraction * D` exactly at `slip_limit`
// for the given shape and curvature factors.
double calibrate_stiffness(double C, double E, double slip_limit, double fraction = kOperatingFraction);

// Reference compounds shipped with the library. Soft: high traction, high
// wear. Hard: 17% lower peak friction, operating limits at larger slip.
TireModel reference_soft_tire();
TireModel reference_hard_tire();

struct SlipSample {
    double slip = 0.0;
    double mu = 0.0;
};

struct MagicFormulaFit {
    MagicFormulaCoeffs coeffs;
    double rms = 0.0;
    int evaluations = 0;
};

// Least-squares fit of all four coefficients with multi-start simplex descent.
// Throws InvalidInput for fewer than 8 samples and FitDiverged when the
// residual RMS stays above 0.05 or the result violates the coefficient invariants.
MagicFormulaFit fit_magic_formula(std::span<const SlipSample> samples);

}  // namespace twsim
