#pragma once

#include <utility>

#include "twsim/emission.hpp"
#include "twsim/tire.hpp"
#include "twsim/vehicle_params.hpp"

namespace twsim {

struct Measurements {
    double sigma = 0.0;  // driver steering, rad
    double u = 0.0;
    double v = 0.0;
    double delta = 0.0;
    double du_dt = 0.0;
    double dv_dt = 0.0;
};

struct BaseForces {
    double f_uf_hat = 0.0;
    double f_ur_hat = 0.0;
    double f_vf_hat = 0.0;
    double f_vr_hat = 0.0;
};

enum class ControlMode { ZeroSteering, Steering };

// How the front longitudinal force of the base vehicle is recovered from the
// lateral balance: divided by sin(sigma) (Equation) or taken undivided (Pseudocode).
enum class EstimateForm { Equation, Pseudocode };

struct ControllerConfig {
    double sigma_eps = 1e-3;
    double eps_min = 1e-5;
    double eps_start = 1e-2;
    double search_bound = 0.1;
    EstimateForm form = EstimateForm::Equation;
};

// Soft compound on the base vehicle and the low-wear rear axle, hard compound on the low-wear front.
struct DualTires {
    TireModel soft;
    TireModel hard;
};

struct DualEmission {
    EmissionParams soft;
    EmissionParams hard;
};

struct ControlDecision {
    double delta_sigma = 0.0;
    double f_vf_ref = 0.0;
    double f_vr_ref = 0.0;
    ControlMode mode = ControlMode::ZeroSteering;
    bool clamped = false;           // reference force or steering clamped to its envelope
    bool search_aborted = false;    // steering search left the admissible window
    bool infeasible_total = false;  // required force exceeds both axle envelopes
};

// Throws DegenerateSpeed.
std::pair<double, double> estimate_base_lateral(const Measurements& meas, const VehicleParams& params,
                                                const MagicFormulaCoeffs& soft_lateral, double zeta);

// Returns (f_vr_hat, f_vf_hat). Throws SingularSteering when |sin sigma| < sigma_eps.
std::pair<double, double> estimate_base_longitudinal(const Measurements& meas, const VehicleParams& params,
                                                     double f_uf_hat, double f_ur_hat, double sigma_eps = 1e-3,
                                                     EstimateForm form = EstimateForm::Equation);

BaseForces estimate_base_forces(const Measurements& meas, const VehicleParams& params, const TireModel& soft,
                                const ControllerConfig& config);

struct SplitResult {
    double f_vf = 0.0;
    double f_vr = 0.0;
    bool clamped = false;
    bool infeasible_total = false;
};

// Emission-optimal division of F_tot = m dv/dt + C_d v^2 between the axles,
// limited to |F_vf| <= front_limit and |F_vr| <= rear_limit.
SplitResult straight_split(const Measurements& meas, const VehicleParams& params, const EmissionParams& p_hard,
                           const EmissionParams& p_soft, double front_limit, double rear_limit);
// Unconstrained minimiser of PN_h(F_f) + PN_s(F_tot - F_f).
double optimal_front_force(double f_total, const EmissionParams& p_hard, const EmissionParams& p_soft);

// Front lateral force of the low-wear vehicle. Throws DegenerateSpeed.
double low_wear_front_lateral(const Measurements& meas, double delta_sigma, const VehicleParams& params,
                              const MagicFormulaCoeffs& hard_lateral, double zeta);

// Longitudinal forces (f_vf, f_vr) that keep the lateral and longitudinal
// balance of the base vehicle. Throws SingularSteering.
std::pair<double, double> forces_for_delta_sigma(const Measurements& meas, double delta_sigma,
                                                 const BaseForces& base, double f_uf, const VehicleParams& params,
                                                 double sigma_eps = 1e-3);

// Total particle number of the low-wear vehicle under correction delta_sigma.
double estimate_pn(const Measurements& meas, double delta_sigma, const VehicleParams& params, const DualTires& tires,
                   const DualEmission& emission, const ControllerConfig& config = {});

struct SteeringSearch {
    double delta_sigma = 0.0;
    double pn = 0.0;
    int evaluations = 0;
    int moves = 0;
    int halvings = 0;
    bool aborted = false;
};

// Greedy local search over delta_sigma. Neighbours that are singular or push
// the hard front tire past its slip-angle limit count as infinitely bad.
SteeringSearch optimize_steering(const Measurements& meas, const VehicleParams& params, const DualTires& tires,
                                 const DualEmission& emission, const ControllerConfig& config = {});

// PN at delta_sigma, or +inf when the correction is not admissible.
double admissible_pn(const Measurements& meas, double delta_sigma, const VehicleParams& params,
                     const DualTires& tires, const DualEmission& emission, const ControllerConfig& config,
                     const BaseForces& base);

ControlDecision control_step(const Measurements& meas, const VehicleParams& params, const DualTires& tires,
                             const DualEmission& emission, const ControllerConfig& config = {});

}  // namespace twsim
