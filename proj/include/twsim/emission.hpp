#pragma once

#include <span>
#include <vector>

#include "twsim/tire.hpp"
#include "twsim/vehicle_params.hpp"

namespace twsim {

// Particle number concentration PN(F) = p2 F^2 + p1 F + p0, in #/cm^3.
struct EmissionParams {
    double p2 = 0.0;
    double p1 = 0.0;
    double p0 = 0.0;

    double vertex_force() const { return -p1 / (2.0 * p2); }
    double minimum_value() const { return p0 - p1 * p1 / (4.0 * p2); }
    // Throws InvalidInput unless p2 > 0 and the minimum is nonnegative.
    void validate() const;
};

inline constexpr double kTreadwearScale = 2.16;
inline constexpr double kTreadwearExponent = 0.133;
inline constexpr double kEmissionRatioExponent = 7.52;

// Fitted soft-compound curve and its hard-compound counterpart.
EmissionParams reference_soft_emission();
EmissionParams reference_hard_emission();

double particle_number(double f_v, const EmissionParams& p);
EmissionParams scale_emission(const EmissionParams& p, double rho);

double treadwear_to_mu(double w);
double emission_ratio_from_mu(double mu_h, double mu_s);

struct PerformanceEnvelope {
    double mu_max = 0.0;
    double f_r = 0.0;     // rolling resistance coefficient
    double k_aero = 0.0;  // rho_air C_D A / (m g), s^2/m^2
};

// rho_air * C_D * A / (m g)
double aero_constant(double air_density, double drag_coefficient, double frontal_area, double mass, double g);

// ln(K v^2 + 2(mu + f_r)) - ln(2(mu + f_r)), divided by K g.
double stopping_distance(double v, double mu_max, double f_r, double k, double g);
// v^2 / (2 (mu + f_r) g)
double stopping_distance_approx(double v, double mu_max, double f_r, double g);
double mu_from_stopping(double v, double d, double k, double f_r, double g);

double fleet_mu_max(const TireModel& front, const TireModel& rear, const VehicleParams& params);
double peak_lateral_acceleration(const TireModel& front, const TireModel& rear, double g);

struct EmissionSample {
    double force = 0.0;
    double pn = 0.0;
};

struct EmissionFit {
    EmissionParams params;
    double r_squared = 0.0;
    bool constraint_active = false;
    double kkt_residual = 0.0;
};

// Least squares under the nonnegativity constraint min PN >= 0. Throws
// InvalidInput for fewer than 4 samples, FitDiverged when rank deficient.
EmissionFit fit_emission_quadratic(std::span<const EmissionSample> samples);

struct EmissionSeries {
    std::vector<double> front;  // per-step PN
    std::vector<double> rear;
    double total_weighted = 0.0;    // sum of (front + rear) * dt
    double total_unweighted = 0.0;  // plain sum of (front + rear)
};

// dt[i] is the elapsed time of step i.
EmissionSeries trajectory_emission(std::span<const double> f_vf, std::span<const double> f_vr,
                                   std::span<const double> dt, const EmissionParams& p_front,
                                   const EmissionParams& p_rear);

}  // namespace twsim
