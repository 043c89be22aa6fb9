#include "twsim/ocp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "twsim/autodiff.hpp"
#include "twsim/error.hpp"

namespace twsim {

namespace {

using Eigen::VectorXd;

// Stage layout: the states with wheel speeds expressed as slip ratios
// (omega = v (1 + lambda) / r_e), the steering input and two auxiliary body
// accelerations. Wheel torques enter only the wheel-speed defects, linearly,
// so they are recovered from consecutive wheel speeds after the solve.
enum Var { kT, kN, kBeta, kU, kV, kDelta, kLamF, kLamR, kSigma, kAv, kAu, kStage };
// Stage variables kN..kSigma enter the nonlinear stage functions.
constexpr int kArgs = 8;
// Path derivatives of t, n, beta, u, v, delta; then accelerations, slip angles and forces.
constexpr int kDefects = 6;
enum Out { oDtDs, oDnDs, oDbetaDs, oDuDs, oDvDs, oDdeltaDs, oAv, oAu, oAf, oAr, oFvf, oFvr, kOut };

using Ad = Eigen::AutoDiffScalar<Eigen::Matrix<double, kArgs, 1>>;
using StageJac = Eigen::Matrix<double, kOut, kArgs>;

template <typename T>
std::array<T, kOut> stage_outputs(const std::array<T, kArgs>& z, const VehicleParams& p, const TireModel& front,
                                  const TireModel& rear, double tau) {
    const T zero(0.0);
    const T omega_f = z[3] * (1.0 + z[5]) / p.r_e;
    const T omega_r = z[3] * (1.0 + z[6]) / p.r_e;
    const auto e = evaluate_dynamics(z[0], z[1], z[2], z[3], z[4], omega_f, omega_r, zero, zero, z[7], p, front, rear,
                                     tau);
    const T inv = 1.0 / e.ds_dt;
    return {inv,
            e.dn_dt * inv,
            e.dbeta_dt * inv,
            e.du_dt * inv,
            e.dv_dt * inv,
            e.ddelta_dt * inv,
            e.dv_dt - z[2] * z[4],
            e.du_dt + z[3] * z[4],
            e.alpha_f,
            e.alpha_r,
            e.f_vf,
            e.f_vr};
}

// value = sum lin + coef * output(stage) + constant
struct Row {
    std::vector<std::pair<int, double>> lin;
    int stage = -1;
    int out = -1;
    double coef = 0.0;
    double constant = 0.0;
};

// weight * (sum lin - target)^2
struct Square {
    std::vector<std::pair<int, double>> lin;
    double target = 0.0;
    double weight = 0.0;
};

// weight * ((sum of weighted outputs of one stage - target) / scale)^2
struct OutputSquare {
    int stage = 0;
    std::vector<std::pair<int, double>> outs;
    double target = 0.0;
    double scale = 1.0;
    double weight = 0.0;
};

int idx(int i, int k) { return i * kStage + k; }

// Unscaled leading stage variables of a state.
std::array<double, VehicleState::kSize> state_vars(const VehicleState& x, double r_e) {
    return {x.t, x.n, x.beta, x.u, x.v, x.delta, r_e * x.omega_f / x.v - 1.0, r_e * x.omega_r / x.v - 1.0};
}

double cornering_slope(const MagicFormulaCoeffs& c, double zeta) { return zeta * c.D * c.B * c.C; }

class Transcription : public NlpProblem {
public:
    explicit Transcription(const OcpProblem& p);

    int num_variables() const override { return (d_ + 1) * kStage; }
    int num_equalities() const override { return static_cast<int>(eq_.size()); }
    int num_inequalities() const override { return static_cast<int>(in_.size()); }
    VectorXd initial_point() const override { return x0_; }
    double objective(const VectorXd& x) const override;
    void objective_gradient(const VectorXd& x, VectorXd& grad) const override;
    void equalities(const VectorXd& x, VectorXd& c) const override { rows_value(eq_, x, c); }
    void inequalities(const VectorXd& x, VectorXd& g) const override { rows_value(in_, x, g); }
    void equality_jacobian(const VectorXd& x, Triplets& out) const override { rows_jacobian(eq_, x, out); }
    void inequality_jacobian(const VectorXd& x, Triplets& out) const override { rows_jacobian(in_, x, out); }
    void lagrangian_hessian(const VectorXd& x, double obj_factor, const VectorXd& lambda, const VectorXd& y,
                            Triplets& out) const override;

    const std::array<double, kStage>& scales() const { return scale_; }
    double tau(int i) const { return tau_[static_cast<size_t>(i)]; }

private:
    std::array<double, kArgs> args(const VectorXd& x, int i) const;
    void ensure_values(const VectorXd& x) const;
    void ensure_jacobians(const VectorXd& x) const;
    StageJac stage_jacobian(const std::array<double, kArgs>& z, int i) const;
    void rows_value(const std::vector<Row>& rows, const VectorXd& x, VectorXd& v) const;
    void rows_jacobian(const std::vector<Row>& rows, const VectorXd& x, Triplets& out) const;
    void build_guess();
    void build_rows();
    void build_objective();
    double output_error(const OutputSquare& o) const;
    Eigen::Matrix<double, kArgs, 1> output_gradient(const OutputSquare& o) const;

    const OcpProblem& p_;
    const int d_;
    const double ds_;
    std::vector<double> tau_;
    std::array<double, kStage> scale_{};
    double dt_ref_ = 1.0;
    VectorXd x0_;
    std::vector<Row> eq_, in_;
    std::vector<std::pair<int, double>> obj_lin_;
    std::vector<Square> obj_sq_;
    std::vector<OutputSquare> obj_out_;

    mutable VectorXd val_x_, jac_x_;
    mutable std::vector<std::array<double, kOut>> val_;
    mutable std::vector<StageJac> jac_;
};

Transcription::Transcription(const OcpProblem& p) : p_(p), d_(p.d), ds_(p.delta_s()) {
    tau_.resize(static_cast<size_t>(d_) + 1);
    for (int i = 0; i <= d_; ++i) {
        tau_[static_cast<size_t>(i)] = p.path.curvature(std::min(i * ds_, p.path.total_length()));
    }
    const double v_s = std::max({p.speed.v_max, p.initial.v, 1.0});
    scale_[kN] = 1.0;
    scale_[kBeta] = 0.1;
    scale_[kU] = 1.0;
    scale_[kV] = v_s;
    scale_[kDelta] = 0.5;
    scale_[kLamF] = 0.05;
    scale_[kLamR] = 0.05;
    scale_[kSigma] = 0.1;
    scale_[kAv] = 5.0;
    scale_[kAu] = 5.0;
    dt_ref_ = ds_ / v_s;
    build_guess();
    build_rows();
    build_objective();
}

double smoothstep(double x) {
    x = std::clamp(x, 0.0, 1.0);
    return x * x * (3.0 - 2.0 * x);
}

void Transcription::build_guess() {
    const auto& p = p_.params;
    const double L = p_.path.total_length();
    const double v0 = p_.initial.v;
    const double v_lo = p_.speed.v_min;
    const double v_hi = std::max(v_lo, p_.speed.v_max);
    const double a_guess = 0.4 * p_.comfort.lon_accel;
    // smooth ramps keep the guess inside the jerk limits
    double up = 1.5 * std::max(0.0, v_hi * v_hi - v0 * v0) / (2.0 * a_guess);
    double down = p_.final_speed ? 1.5 * std::max(0.0, v_hi * v_hi - *p_.final_speed * *p_.final_speed) / (2.0 * a_guess) : 0.0;
    if (up + down > L) {
        const double k = L / (up + down);
        up *= k;
        down *= k;
    }
    auto ramp = [](double from, double to, double x, double len) {
        return len > 0.0 ? from + (to - from) * smoothstep(x / len) : to;
    };

    std::vector<double> vg(static_cast<size_t>(d_) + 1);
    for (int i = 0; i <= d_; ++i) {
        const double s = i * ds_;
        double v = v0;
        switch (p_.objective) {
            case ObjectiveKind::MinSpeed: {
                const double mu = std::min(p_.front.longitudinal.D * p_.front.zeta, p_.rear.longitudinal.D * p_.rear.zeta);
                v = std::sqrt(std::max(v_lo * v_lo, v0 * v0 - 2.0 * 0.6 * mu * p.g * s));
                break;
            }
            case ObjectiveKind::MinTime:
                // the first step is fixed by the initial state, so the ramp starts one station late
                v = ramp(v0, v_hi, std::max(0.0, s - ds_), up);
                if (p_.final_speed) v = std::min(v, ramp(*p_.final_speed, v_hi, L - s, down));
                break;
            case ObjectiveKind::ForceTracking:
                v = p_.reference.v[static_cast<size_t>(i)];
                break;
        }
        vg[static_cast<size_t>(i)] = std::clamp(v, v_lo, v_hi);
    }
    vg[0] = v0;

    // curvature averaged over the time a jerk-limited lateral acceleration needs to build up
    std::vector<double> tau_g(static_cast<size_t>(d_) + 1);
    double tau_max = 0.0;
    for (double tau : tau_) tau_max = std::max(tau_max, std::abs(tau));
    for (int i = 0; i <= d_; ++i) {
        const double v = vg[static_cast<size_t>(i)];
        const double half = 0.5 * v * (v * v * tau_max / p_.comfort.lat_jerk) + 1e-9;
        constexpr int samples = 21;
        double sum = 0.0;
        for (int k = 0; k < samples; ++k) {
            const double s = std::clamp(i * ds_ - half + 2.0 * half * k / (samples - 1), 0.0, L);
            sum += p_.path.curvature(s);
        }
        tau_g[static_cast<size_t>(i)] = sum / samples;
    }

    const double wb = p.wheelbase();
    const double load_f = p.m * p.g * p.l_r / wb;
    const double load_r = p.m * p.g * p.l_f / wb;
    const double ca_f = load_f * cornering_slope(p_.front.lateral, p_.front.zeta);
    const double ca_r = load_r * cornering_slope(p_.rear.lateral, p_.rear.zeta);
    const double cl_f = load_f * cornering_slope(p_.front.longitudinal, p_.front.zeta);
    const double cl_r = load_r * cornering_slope(p_.rear.longitudinal, p_.rear.zeta);

    x0_.resize(num_variables());
    double t = p_.initial.t;
    double a_prev = 0.0;
    for (int i = 0; i <= d_; ++i) {
        const size_t si = static_cast<size_t>(i);
        const double v = vg[si];
        const double delta = v * tau_g[si];
        const double a_lat = v * delta;
        const double alpha_r = std::clamp(0.5 * p.m * a_lat / ca_r, -p_.rear.slip_angle_limit, p_.rear.slip_angle_limit);
        const double alpha_f = std::clamp(0.5 * p.m * a_lat / ca_f, -p_.front.slip_angle_limit, p_.front.slip_angle_limit);
        const double u = p.l_r * delta - v * alpha_r;
        double sigma = alpha_f + (u + p.l_f * delta) / v;
        if (p_.objective == ObjectiveKind::ForceTracking) sigma = p_.reference.sigma[si];
        // Euler-consistent: v(i+1) = v(i) + ds * a / v
        const double a_lon = i < d_ ? v * (vg[si + 1] - v) / ds_ : a_prev;
        a_prev = a_lon;
        double f_f = 0.5 * (p.m * a_lon + p.c_d * v * v);
        double f_r = f_f;
        if (p_.objective == ObjectiveKind::ForceTracking && i > 0) {
            f_f = p_.reference.f_vf[si];
            f_r = p_.reference.f_vr[si];
        }
        const double lam_f = std::clamp(f_f / cl_f, -p_.front.slip_ratio_limit, p_.front.slip_ratio_limit);
        const double lam_r = std::clamp(f_r / cl_r, -p_.rear.slip_ratio_limit, p_.rear.slip_ratio_limit);

        std::array<double, kStage> z{};
        z[kT] = t;
        z[kN] = 0.0;
        z[kBeta] = -std::atan(u / v);
        z[kU] = u;
        z[kV] = v;
        z[kDelta] = delta;
        z[kLamF] = lam_f;
        z[kLamR] = lam_r;
        z[kSigma] = sigma;
        z[kAv] = a_lon;
        z[kAu] = a_lat;
        if (i == 0) {
            const auto init = state_vars(p_.initial, p.r_e);
            for (int k = 0; k < VehicleState::kSize; ++k) z[static_cast<size_t>(k)] = init[static_cast<size_t>(k)];
        }
        for (int k = 0; k < kStage; ++k) x0_(idx(i, k)) = z[static_cast<size_t>(k)] / (k == kT ? 1.0 : scale_[static_cast<size_t>(k)]);
        t += ds_ / v;
    }
    scale_[kT] = std::max(1.0, t - p_.initial.t);
    for (int i = 0; i <= d_; ++i) x0_(idx(i, kT)) /= scale_[kT];
}

void Transcription::build_rows() {
    const int d = d_;
    const auto& S = scale_;
    const bool tracking = p_.objective == ObjectiveKind::ForceTracking;
    const auto init = state_vars(p_.initial, p_.params.r_e);

    for (int k = 0; k < VehicleState::kSize; ++k) {
        eq_.push_back({{{idx(0, k), 1.0}}, -1, -1, 0.0, -init[static_cast<size_t>(k)] / S[static_cast<size_t>(k)]});
    }
    for (int i = 0; i < d; ++i) {
        for (int k = 0; k < kDefects; ++k) {
            eq_.push_back({{{idx(i + 1, k), 1.0}, {idx(i, k), -1.0}}, i, k, -ds_ / S[static_cast<size_t>(k)], 0.0});
        }
    }
    for (int i = 0; i <= d; ++i) {
        eq_.push_back({{{idx(i, kAv), 1.0}}, i, oAv, -1.0 / S[kAv], 0.0});
        eq_.push_back({{{idx(i, kAu), 1.0}}, i, oAu, -1.0 / S[kAu], 0.0});
    }
    if (!tracking) eq_.push_back({{{idx(d, kSigma), 1.0}, {idx(d - 1, kSigma), -1.0}}, -1, -1, 0.0, 0.0});
    if (p_.final_speed) {
        eq_.push_back({{{idx(d, kV), 1.0}}, -1, -1, 0.0, -*p_.final_speed / S[kV]});
    }

    // inequalities, physical units except slips (relative to their limits)
    // Q(1) follows from the given initial state, so state bounds start at station 2
    for (int i = 2; i <= d; ++i) {
        if (p_.lane.enabled) {
            const double w = p_.lane.half_width;
            in_.push_back({{{idx(i, kN), S[kN]}}, -1, -1, 0.0, -w});
            in_.push_back({{{idx(i, kN), -S[kN]}}, -1, -1, 0.0, -w});
        }
        if (i == d && p_.final_speed) continue;  // fixed by the terminal equality
        in_.push_back({{{idx(i, kV), -S[kV]}}, -1, -1, 0.0, p_.speed.v_min});
        in_.push_back({{{idx(i, kV), S[kV]}}, -1, -1, 0.0, -p_.speed.v_max});
    }
    const std::array<std::pair<int, double>, 2> angles = {std::pair{int(oAf), p_.front.slip_angle_limit},
                                                          std::pair{int(oAr), p_.rear.slip_angle_limit}};
    for (int i = 0; i <= d; ++i) {
        in_.push_back({{{idx(i, kLamF), S[kLamF] / p_.front.slip_ratio_limit}}, -1, -1, 0.0, -1.0});
        in_.push_back({{{idx(i, kLamF), -S[kLamF] / p_.front.slip_ratio_limit}}, -1, -1, 0.0, -1.0});
        in_.push_back({{{idx(i, kLamR), S[kLamR] / p_.rear.slip_ratio_limit}}, -1, -1, 0.0, -1.0});
        in_.push_back({{{idx(i, kLamR), -S[kLamR] / p_.rear.slip_ratio_limit}}, -1, -1, 0.0, -1.0});
        for (const auto& [out, lim] : angles) {
            in_.push_back({{}, i, out, 1.0 / lim, -1.0});
            in_.push_back({{}, i, out, -1.0 / lim, -1.0});
        }
        const double m = p_.steering.max_angle;
        in_.push_back({{{idx(i, kSigma), S[kSigma]}}, -1, -1, 0.0, -m});
        in_.push_back({{{idx(i, kSigma), -S[kSigma]}}, -1, -1, 0.0, -m});
        if (p_.comfort.enabled) {
            in_.push_back({{{idx(i, kAv), S[kAv]}}, -1, -1, 0.0, -p_.comfort.lon_accel});
            in_.push_back({{{idx(i, kAu), S[kAu]}}, -1, -1, 0.0, -p_.comfort.lat_accel});
            in_.push_back({{{idx(i, kAu), -S[kAu]}}, -1, -1, 0.0, -p_.comfort.lat_accel});
        }
    }
    // rate rows: +-(q(i+1) - q(i)) - bound * (t(i+1) - t(i)) <= 0, divided by a reference step time
    auto rate_rows = [&](int k, double bound) {
        const double st = S[kT] / dt_ref_;
        const double sq = S[static_cast<size_t>(k)] / dt_ref_;
        for (int i = 0; i < d; ++i) {
            for (double sign : {1.0, -1.0}) {
                in_.push_back({{{idx(i + 1, k), sign * sq}, {idx(i, k), -sign * sq}, {idx(i + 1, kT), -bound * st},
                                {idx(i, kT), bound * st}},
                               -1, -1, 0.0, 0.0});
            }
        }
    };
    rate_rows(kSigma, p_.steering.max_rate);
    if (p_.comfort.enabled) {
        rate_rows(kAv, p_.comfort.lon_jerk);
        rate_rows(kAu, p_.comfort.lat_jerk);
    }
}

void Transcription::build_objective() {
    const int d = d_;
    const auto& S = scale_;
    switch (p_.objective) {
        case ObjectiveKind::MinTime:
            obj_lin_.push_back({idx(d, kT), 1.0});
            break;
        case ObjectiveKind::MinSpeed:
            for (int i = 0; i <= d; ++i) obj_sq_.push_back({{{idx(i, kV), S[kV]}}, 0.0, 1.0 / ((d + 1) * S[kV])});
            break;
        case ObjectiveKind::ForceTracking: {
            const auto& r = p_.reference;
            for (int i = 1; i <= d; ++i) {
                const size_t si = static_cast<size_t>(i);
                obj_out_.push_back({i, {{oFvf, 1.0}}, r.f_vf[si], r.force_scale, 1.0 / d});
                obj_out_.push_back({i, {{oFvr, 1.0}}, r.f_vr[si], r.force_scale, 1.0 / d});
            }
            for (int i = 0; i <= d; ++i) {
                const size_t si = static_cast<size_t>(i);
                obj_sq_.push_back({{{idx(i, kV), S[kV]}}, r.v[si], r.speed_weight / d});
                obj_sq_.push_back({{{idx(i, kSigma), S[kSigma]}}, r.sigma[si], r.steering_weight / d});
                if (!r.n.empty()) obj_sq_.push_back({{{idx(i, kN), S[kN]}}, r.n[si], r.lateral_weight / d});
            }
            return;
        }
    }
    const double f_s = 0.5 * p_.params.m * p_.params.g;
    for (int i = 0; i <= d; ++i) {
        obj_out_.push_back({i, {{oFvf, 1.0}, {oFvr, -1.0}}, 0.0, f_s, p_.split_weight / (d + 1)});
    }
    for (int i = 0; i < d; ++i) {
        obj_sq_.push_back({{{idx(i + 1, kSigma), 1.0}, {idx(i, kSigma), -1.0}}, 0.0, p_.smooth_weight / d});
    }
}

std::array<double, kArgs> Transcription::args(const VectorXd& x, int i) const {
    std::array<double, kArgs> z{};
    for (int k = 0; k < kArgs; ++k) z[static_cast<size_t>(k)] = x(idx(i, k + 1)) * scale_[static_cast<size_t>(k + 1)];
    return z;
}

void Transcription::ensure_values(const VectorXd& x) const {
    if (val_x_.size() == x.size() && val_x_ == x) return;
    val_.resize(static_cast<size_t>(d_) + 1);
    for (int i = 0; i <= d_; ++i) {
        val_[static_cast<size_t>(i)] = stage_outputs(args(x, i), p_.params, p_.front, p_.rear, tau_[static_cast<size_t>(i)]);
    }
    val_x_ = x;
}

// Jacobian with respect to the scaled stage variables.
StageJac Transcription::stage_jacobian(const std::array<double, kArgs>& z, int i) const {
    std::array<Ad, kArgs> a;
    for (int k = 0; k < kArgs; ++k) {
        a[static_cast<size_t>(k)] = Ad(z[static_cast<size_t>(k)], kArgs, k);
    }
    const auto out = stage_outputs(a, p_.params, p_.front, p_.rear, tau_[static_cast<size_t>(i)]);
    StageJac j;
    for (int r = 0; r < kOut; ++r) {
        const auto& der = out[static_cast<size_t>(r)].derivatives();
        for (int k = 0; k < kArgs; ++k) {
            j(r, k) = der.size() ? der(k) * scale_[static_cast<size_t>(k + 1)] : 0.0;
        }
    }
    return j;
}

void Transcription::ensure_jacobians(const VectorXd& x) const {
    if (jac_x_.size() == x.size() && jac_x_ == x) return;
    jac_.resize(static_cast<size_t>(d_) + 1);
    for (int i = 0; i <= d_; ++i) jac_[static_cast<size_t>(i)] = stage_jacobian(args(x, i), i);
    jac_x_ = x;
}

void Transcription::rows_value(const std::vector<Row>& rows, const VectorXd& x, VectorXd& v) const {
    ensure_values(x);
    for (size_t r = 0; r < rows.size(); ++r) {
        const Row& row = rows[r];
        double s = row.constant;
        for (const auto& [j, c] : row.lin) s += c * x(j);
        if (row.stage >= 0) s += row.coef * val_[static_cast<size_t>(row.stage)][static_cast<size_t>(row.out)];
        v(static_cast<Eigen::Index>(r)) = s;
    }
}

void Transcription::rows_jacobian(const std::vector<Row>& rows, const VectorXd& x, Triplets& out) const {
    ensure_jacobians(x);
    for (size_t r = 0; r < rows.size(); ++r) {
        const Row& row = rows[r];
        const int ri = static_cast<int>(r);
        for (const auto& [j, c] : row.lin) out.emplace_back(ri, j, c);
        if (row.stage >= 0) {
            const StageJac& jac = jac_[static_cast<size_t>(row.stage)];
            for (int k = 0; k < kArgs; ++k) out.emplace_back(ri, idx(row.stage, k + 1), row.coef * jac(row.out, k));
        }
    }
}

double Transcription::output_error(const OutputSquare& o) const {
    double s = -o.target;
    for (const auto& [out, c] : o.outs) s += c * val_[static_cast<size_t>(o.stage)][static_cast<size_t>(out)];
    return s / o.scale;
}

Eigen::Matrix<double, kArgs, 1> Transcription::output_gradient(const OutputSquare& o) const {
    Eigen::Matrix<double, kArgs, 1> g = Eigen::Matrix<double, kArgs, 1>::Zero();
    for (const auto& [out, c] : o.outs) g += c * jac_[static_cast<size_t>(o.stage)].row(out).transpose();
    return g;
}

double Transcription::objective(const VectorXd& x) const {
    double f = 0.0;
    for (const auto& [j, c] : obj_lin_) f += c * x(j);
    for (const auto& sq : obj_sq_) {
        double s = -sq.target;
        for (const auto& [j, c] : sq.lin) s += c * x(j);
        f += sq.weight * s * s;
    }
    if (!obj_out_.empty()) {
        ensure_values(x);
        for (const auto& o : obj_out_) {
            const double e = output_error(o);
            f += o.weight * e * e;
        }
    }
    return f;
}

void Transcription::objective_gradient(const VectorXd& x, VectorXd& grad) const {
    grad.setZero();
    for (const auto& [j, c] : obj_lin_) grad(j) += c;
    for (const auto& sq : obj_sq_) {
        double s = -sq.target;
        for (const auto& [j, c] : sq.lin) s += c * x(j);
        for (const auto& [j, c] : sq.lin) grad(j) += 2.0 * sq.weight * s * c;
    }
    if (!obj_out_.empty()) {
        ensure_values(x);
        ensure_jacobians(x);
        for (const auto& o : obj_out_) {
            const double w = 2.0 * o.weight * output_error(o) / o.scale;
            const auto g = output_gradient(o);
            for (int k = 0; k < kArgs; ++k) grad(idx(o.stage, k + 1)) += w * g(k);
        }
    }
}

void Transcription::lagrangian_hessian(const VectorXd& x, double obj_factor, const VectorXd& lambda,
                                       const VectorXd& y, Triplets& out) const {
    ensure_values(x);
    ensure_jacobians(x);
    // per-stage multipliers of every stage output
    std::vector<Eigen::Matrix<double, kOut, 1>> w(static_cast<size_t>(d_) + 1, Eigen::Matrix<double, kOut, 1>::Zero());
    auto gather = [&](const std::vector<Row>& rows, const VectorXd& mult) {
        for (size_t r = 0; r < rows.size(); ++r) {
            const Row& row = rows[r];
            if (row.stage >= 0) w[static_cast<size_t>(row.stage)](row.out) += mult(static_cast<Eigen::Index>(r)) * row.coef;
        }
    };
    gather(eq_, lambda);
    gather(in_, y);

    // Gauss-Newton part of the output squares is exact; their curvature term joins the weights.
    std::vector<Eigen::Matrix<double, kArgs, kArgs>> gn(static_cast<size_t>(d_) + 1,
                                                        Eigen::Matrix<double, kArgs, kArgs>::Zero());
    for (const auto& o : obj_out_) {
        const size_t st = static_cast<size_t>(o.stage);
        const double c = obj_factor * 2.0 * o.weight * output_error(o) / o.scale;
        for (const auto& [out, coef] : o.outs) w[st](out) += c * coef;
        const auto g = output_gradient(o);
        gn[st] += obj_factor * 2.0 * o.weight / (o.scale * o.scale) * g * g.transpose();
    }

    constexpr double h = 1e-5;
    for (int i = 0; i <= d_; ++i) {
        const size_t si = static_cast<size_t>(i);
        Eigen::Matrix<double, kArgs, kArgs> hs = gn[si];
        if (w[si].cwiseAbs().maxCoeff() > 0.0) {
            const auto z = args(x, i);
            Eigen::Matrix<double, kArgs, kArgs> fd;
            for (int k = 0; k < kArgs; ++k) {
                auto zp = z, zm = z;
                zp[static_cast<size_t>(k)] += h * scale_[static_cast<size_t>(k + 1)];
                zm[static_cast<size_t>(k)] -= h * scale_[static_cast<size_t>(k + 1)];
                fd.col(k) = (stage_jacobian(zp, i).transpose() * w[si] - stage_jacobian(zm, i).transpose() * w[si]) / (2.0 * h);
            }
            hs += 0.5 * (fd + fd.transpose());
        }
        for (int a = 0; a < kArgs; ++a) {
            for (int b = 0; b <= a; ++b) out.emplace_back(idx(i, a + 1), idx(i, b + 1), hs(a, b));
        }
    }
    for (const auto& sq : obj_sq_) {
        for (const auto& [ja, ca] : sq.lin) {
            for (const auto& [jb, cb] : sq.lin) {
                if (ja >= jb) out.emplace_back(ja, jb, obj_factor * 2.0 * sq.weight * ca * cb);
            }
        }
    }
}

double neg_inf() { return -std::numeric_limits<double>::infinity(); }

}  // namespace

void OcpProblem::validate() const {
    auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidInput, m); };
    if (d < 2) bad("step count must be at least 2");
    if (!(path.total_length() > 0.0)) bad("path has no length");
    params.validate();
    front.validate();
    rear.validate();
    auto positive = [&](double v, const char* name) {
        if (!(std::isfinite(v) && v > 0.0)) bad(std::string(name) + " must be finite and positive");
    };
    positive(comfort.lat_accel, "lateral acceleration limit");
    positive(comfort.lon_accel, "longitudinal acceleration limit");
    positive(comfort.lat_jerk, "lateral jerk limit");
    positive(comfort.lon_jerk, "longitudinal jerk limit");
    positive(steering.max_angle, "steering limit");
    positive(steering.max_rate, "steering rate limit");
    positive(lane.half_width, "lane half width");
    positive(speed.v_min, "minimum speed");
    positive(speed.v_max, "maximum speed");
    if (speed.v_max < speed.v_min) bad("maximum speed below minimum speed");
    if (!(initial.v >= speed.v_min)) bad("initial speed below the speed floor");
    if (final_speed && !(*final_speed >= speed.v_min && *final_speed <= speed.v_max)) bad("final speed out of bounds");
    if (objective == ObjectiveKind::ForceTracking) {
        const size_t n = static_cast<size_t>(d) + 1;
        if (reference.f_vf.size() != n || reference.f_vr.size() != n || reference.sigma.size() != n ||
            reference.v.size() != n) {
            bad("tracking references need d + 1 entries");
        }
        positive(reference.force_scale, "force scale");
        if (!reference.n.empty() && reference.n.size() != n) bad("tracking references need d + 1 entries");
        if (!(reference.speed_weight >= 0.0) || !(reference.steering_weight >= 0.0) ||
            !(reference.lateral_weight >= 0.0)) {
            bad("tracking weights must be nonnegative");
        }
    }
    if (!(split_weight >= 0.0) || !(smooth_weight >= 0.0)) bad("regularisation weights must be nonnegative");
}

double ViolationReport::max() const {
    return std::max({lane, steering, steering_rate, slip, speed, lat_accel, lon_accel, lat_jerk, lon_jerk});
}

std::string ViolationReport::worst() const {
    const std::array<std::pair<const char*, double>, 9> all = {
        std::pair{"lane", lane},         {"steering", steering},   {"steering_rate", steering_rate},
        {"slip", slip},                  {"speed", speed},         {"lat_accel", lat_accel},
        {"lon_accel", lon_accel},        {"lat_jerk", lat_jerk},   {"lon_jerk", lon_jerk}};
    const auto it = std::max_element(all.begin(), all.end(), [](auto a, auto b) { return a.second < b.second; });
    return it->first;
}

double objective_min_time(std::span<const VehicleState> states, const Path& path, double delta_s) {
    double t = 0.0;
    for (size_t i = 0; i + 1 < states.size(); ++i) {
        const auto& x = states[i];
        const double tau = path.curvature(std::min(static_cast<double>(i) * delta_s, path.total_length()));
        t += delta_s * (1.0 + x.n * tau) / (x.v * std::cos(x.beta) - x.u * std::sin(x.beta));
    }
    return t;
}

double objective_min_speed(std::span<const VehicleState> states) {
    double s = 0.0;
    for (size_t i = 1; i < states.size(); ++i) s += states[i].v * states[i].v;
    return s;
}

double objective_force_tracking(std::span<const ForceReport> forces, std::span<const double> f_vf_ref,
                                std::span<const double> f_vr_ref) {
    if (forces.size() < 2 || f_vf_ref.size() != forces.size() - 1 || f_vr_ref.size() != forces.size() - 1) {
        throw Error(ErrorKind::InvalidInput, "references must hold one entry per step");
    }
    double j = 0.0;
    for (size_t i = 1; i < forces.size(); ++i) {
        const double ef = forces[i].forces.f_vf - f_vf_ref[i - 1];
        const double er = forces[i].forces.f_vr - f_vr_ref[i - 1];
        j += ef * ef + er * er;
    }
    return j;
}

std::pair<double, double> body_accelerations(const VehicleState& x, const ControlInput& in, const VehicleParams& p,
                                             const TireModel& front, const TireModel& rear) {
    const auto e = evaluate_dynamics(x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, in.torque_f, in.torque_r,
                                     in.sigma, p, front, rear, 0.0);
    return {e.dv_dt - x.u * x.delta, e.du_dt + x.v * x.delta};
}

ViolationReport constraint_eval(std::span<const VehicleState> states, std::span<const ControlInput> inputs,
                                const OcpProblem& problem) {
    if (states.size() != inputs.size() || states.empty()) {
        throw Error(ErrorKind::InvalidInput, "states and inputs must have equal, nonzero length");
    }
    ViolationReport r{neg_inf(), neg_inf(), neg_inf(), neg_inf(), neg_inf(), neg_inf(), neg_inf(), neg_inf(), neg_inf()};
    const auto& c = problem.comfort;
    std::vector<double> a_v(states.size()), a_u(states.size());
    for (size_t i = 0; i < states.size(); ++i) {
        const auto& x = states[i];
        const auto& in = inputs[i];
        if (i > 0) {
            if (problem.lane.enabled) r.lane = std::max(r.lane, std::abs(x.n) - problem.lane.half_width);
            r.speed = std::max({r.speed, problem.speed.v_min - x.v, x.v - problem.speed.v_max});
        }
        const auto e = evaluate_dynamics(x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, in.torque_f,
                                         in.torque_r, in.sigma, problem.params, problem.front, problem.rear, 0.0);
        r.slip = std::max({r.slip, std::abs(e.lambda_f) - problem.front.slip_ratio_limit,
                           std::abs(e.lambda_r) - problem.rear.slip_ratio_limit,
                           std::abs(e.alpha_f) - problem.front.slip_angle_limit,
                           std::abs(e.alpha_r) - problem.rear.slip_angle_limit});
        r.steering = std::max(r.steering, std::abs(in.sigma) - problem.steering.max_angle);
        a_v[i] = e.dv_dt - x.u * x.delta;
        a_u[i] = e.du_dt + x.v * x.delta;
        if (c.enabled) {
            r.lon_accel = std::max(r.lon_accel, a_v[i] - c.lon_accel);
            r.lat_accel = std::max(r.lat_accel, std::abs(a_u[i]) - c.lat_accel);
        }
    }
    for (size_t i = 0; i + 1 < states.size(); ++i) {
        const double dt = states[i + 1].t - states[i].t;
        if (!(dt > 0.0)) continue;
        r.steering_rate = std::max(r.steering_rate,
                                   std::abs(inputs[i + 1].sigma - inputs[i].sigma) / dt - problem.steering.max_rate);
        if (c.enabled) {
            r.lon_jerk = std::max(r.lon_jerk, std::abs(a_v[i + 1] - a_v[i]) / dt - c.lon_jerk);
            r.lat_jerk = std::max(r.lat_jerk, std::abs(a_u[i + 1] - a_u[i]) / dt - c.lat_jerk);
        }
    }
    return r;
}

OcpSolution solve(const OcpProblem& problem, const NlpOptions& options) {
    problem.validate();
    Transcription tr(problem);
    const NlpResult res = solve_nlp(tr, options);
    const auto& S = tr.scales();
    const int d = problem.d;
    const double ds = problem.delta_s();

    OcpSolution sol;
    sol.delta_s = ds;
    sol.iterations = res.iterations;
    sol.converged = res.converged;
    sol.message = res.message;
    sol.merit_log = res.merit_log;
    for (int i = 0; i <= d; ++i) {
        std::array<double, kStage> z{};
        for (int k = 0; k < kStage; ++k) z[static_cast<size_t>(k)] = res.x(idx(i, k)) * S[static_cast<size_t>(k)];
        sol.s.push_back(std::min(i * ds, problem.path.total_length()));
        sol.states.push_back({z[kT], z[kN], z[kBeta], z[kU], z[kV], z[kDelta], z[kV] * (1.0 + z[kLamF]) / problem.params.r_e,
                              z[kV] * (1.0 + z[kLamR]) / problem.params.r_e});
        sol.inputs.push_back({0.0, 0.0, z[kSigma]});
        sol.a_v.push_back(z[kAv]);
        sol.a_u.push_back(z[kAu]);
    }
    // wheel torques from the wheel-speed steps: omega(i+1) = omega(i) + ds * dt/ds * (T - F_v r_e) / J
    const auto& p = problem.params;
    for (int i = 0; i <= d; ++i) {
        const size_t si = static_cast<size_t>(i);
        auto& in = sol.inputs[si];
        if (i < d) {
            const auto& x = sol.states[si];
            const auto& x1 = sol.states[si + 1];
            const auto e = evaluate_dynamics(x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, 0.0, 0.0, in.sigma,
                                             p, problem.front, problem.rear, tr.tau(i));
            const double dt = ds / e.ds_dt;
            in.torque_f = e.f_vf * p.r_e + p.j_wheel * (x1.omega_f - x.omega_f) / dt;
            in.torque_r = e.f_vr * p.r_e + p.j_wheel * (x1.omega_r - x.omega_r) / dt;
        } else {
            in.torque_f = sol.inputs[si - 1].torque_f;
            in.torque_r = sol.inputs[si - 1].torque_r;
        }
    }
    for (int i = 0; i <= d; ++i) {
        const size_t si = static_cast<size_t>(i);
        const auto& x = sol.states[si];
        const auto& in = sol.inputs[si];
        const auto e = evaluate_dynamics(x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, in.torque_f,
                                         in.torque_r, in.sigma, p, problem.front, problem.rear, tr.tau(i));
        sol.forces.push_back({{e.f_vf, e.f_vr, e.f_uf, e.f_ur}, e.lambda_f, e.lambda_r, e.alpha_f, e.alpha_r});
        if (i == d) break;
        const double inv = 1.0 / e.ds_dt;
        const std::array<double, VehicleState::kSize> rate = {
            inv, e.dn_dt * inv, e.dbeta_dt * inv, e.du_dt * inv, e.dv_dt * inv, e.ddelta_dt * inv,
            e.domega_f_dt * inv, e.domega_r_dt * inv};
        const auto a = x.to_array();
        const auto b = sol.states[si + 1].to_array();
        for (int k = 0; k < VehicleState::kSize; ++k) {
            const size_t sk = static_cast<size_t>(k);
            const double pred = a[sk] + ds * rate[sk];
            const double scale = k >= kLamF ? S[kV] / p.r_e : S[sk];
            sol.defect_max = std::max(sol.defect_max, std::abs(b[sk] - pred) / scale);
        }
    }
    switch (problem.objective) {
        case ObjectiveKind::MinTime:
            sol.objective = objective_min_time(sol.states, problem.path, ds);
            break;
        case ObjectiveKind::MinSpeed:
            sol.objective = objective_min_speed(sol.states);
            break;
        case ObjectiveKind::ForceTracking: {
            const auto& r = problem.reference;
            const std::vector<double> f(r.f_vf.begin() + 1, r.f_vf.end()), g(r.f_vr.begin() + 1, r.f_vr.end());
            sol.objective = objective_force_tracking(sol.forces, f, g);
            break;
        }
    }
    sol.violations = constraint_eval(sol.states, sol.inputs, problem);
    return sol;
}

}  // namespace twsim
