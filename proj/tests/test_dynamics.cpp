#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "twsim/dynamics.hpp"
#include "twsim/error.hpp"

using namespace twsim;

namespace {

const VehicleParams kParams;

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::InvalidInput;
}

VehicleState random_state(std::mt19937& rng) {
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    VehicleState x;
    x.t = 3.0;
    x.n = 0.5 * uni(rng);
    x.beta = 0.05 * uni(rng);
    x.u = 0.3 * uni(rng);
    x.v = 15.0 + 10.0 * uni(rng);
    x.delta = 0.2 * uni(rng);
    x.omega_f = x.v / kParams.r_e * (1.0 + 0.03 * uni(rng));
    x.omega_r = x.v / kParams.r_e * (1.0 + 0.03 * uni(rng));
    return x;
}

// Time-domain right-hand side including the station s, for RK4 integration.
std::array<double, 9> rhs(const std::array<double, 9>& y, const ControlInput& in, double tau) {
    VehicleState x{0.0, y[1], y[2], y[3], y[4], y[5], y[6], y[7]};
    const auto r = time_derivatives(x, in, kParams, reference_hard_tire(), reference_soft_tire(), tau);
    return {1.0, r.dn_dt, r.dbeta_dt, r.du_dt, r.dv_dt, r.ddelta_dt, r.domega_f_dt, r.domega_r_dt, r.ds_dt};
}

std::array<double, 9> rk4(std::array<double, 9> y, const ControlInput& in, double tau, double dt, int steps) {
    auto axpy = [](const std::array<double, 9>& a, const std::array<double, 9>& b, double h) {
        std::array<double, 9> out;
        for (int k = 0; k < 9; ++k) out[k] = a[k] + h * b[k];
        return out;
    };
    for (int i = 0; i < steps; ++i) {
        const auto k1 = rhs(y, in, tau);
        const auto k2 = rhs(axpy(y, k1, dt / 2), in, tau);
        const auto k3 = rhs(axpy(y, k2, dt / 2), in, tau);
        const auto k4 = rhs(axpy(y, k3, dt), in, tau);
        for (int k = 0; k < 9; ++k) y[k] += dt / 6.0 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]);
    }
    return y;
}

}  // namespace

TEST(Path, Curvature) {
    const auto path = Path::straight_arc_straight(100.0, 50.0, 32.0, TurnDirection::Left, 100.0);
    EXPECT_DOUBLE_EQ(path.total_length(), 250.0);
    EXPECT_EQ(path.curvature(0.0), 0.0);
    EXPECT_EQ(path.curvature(99.999), 0.0);
    EXPECT_DOUBLE_EQ(path.curvature(100.0), -0.03125);
    EXPECT_DOUBLE_EQ(path.curvature(120.0), -1.0 / 32.0);
    EXPECT_EQ(path.curvature(150.0), 0.0);
    EXPECT_EQ(path.curvature(250.0), 0.0);
    const auto right = Path::straight_arc_straight(10.0, 5.0, 20.0, TurnDirection::Right, 10.0);
    EXPECT_DOUBLE_EQ(right.curvature(12.0), 0.05);
    EXPECT_EQ(kind_of([&] { path.curvature(-0.1); }), ErrorKind::OutOfPath);
    EXPECT_EQ(kind_of([&] { path.curvature(250.1); }), ErrorKind::OutOfPath);
    EXPECT_THROW(Path(std::vector<PathSegment>{}), Error);
    EXPECT_THROW(Path({PathSegment{SegmentKind::Arc, 10.0, 0.0}}), Error);
}

TEST(TimeDerivatives, DragOnlyStraightTravel) {
    const auto soft = reference_soft_tire();
    VehicleState x = VehicleState::rolling(10.0, kParams.r_e);
    const auto r = time_derivatives(x, {}, kParams, soft, soft, 0.0);
    EXPECT_EQ(r.du_dt, 0.0);
    EXPECT_EQ(r.ddelta_dt, 0.0);
    EXPECT_DOUBLE_EQ(r.dv_dt, -kParams.c_d * 100.0 / kParams.m);
    EXPECT_EQ(r.domega_f_dt, 0.0);
    EXPECT_EQ(r.domega_r_dt, 0.0);
    EXPECT_DOUBLE_EQ(r.ds_dt, 10.0);
}

TEST(TimeDerivatives, ForceAndYawBalance) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    const auto hard = reference_hard_tire();
    const auto soft = reference_soft_tire();
    for (int k = 0; k < 500; ++k) {
        const auto x = random_state(rng);
        const ControlInput in{300.0 * uni(rng), 300.0 * uni(rng), 0.3 * uni(rng)};
        const auto r = time_derivatives(x, in, kParams, hard, soft, 0.01 * uni(rng));
        const auto slips = slip_angles(in.sigma, x.u, x.v, x.delta, kParams.l_f, kParams.l_r);
        const auto f = axle_forces(kParams, hard, soft, slip_ratio(kParams.r_e, x.omega_f, x.v),
                                   slip_ratio(kParams.r_e, x.omega_r, x.v), slips.front, slips.rear);
        const double lhs = kParams.m * (r.dv_dt - x.u * x.delta) + kParams.c_d * x.v * x.v;
        const double rhs_v = f.f_vr + f.f_vf * std::cos(in.sigma) - f.f_uf * std::sin(in.sigma);
        EXPECT_NEAR(lhs, rhs_v, 1e-9 * std::max(1.0, std::abs(rhs_v)));
        const double yaw_l = kParams.i_z * r.ddelta_dt + f.f_ur * kParams.l_r;
        const double yaw_r = kParams.l_f * (f.f_vf * std::sin(in.sigma) + f.f_uf * std::cos(in.sigma));
        EXPECT_NEAR(yaw_l, yaw_r, 1e-9 * std::max(1.0, std::abs(yaw_r)));
        EXPECT_NEAR(kParams.j_wheel * r.domega_f_dt, in.torque_f - f.f_vf * kParams.r_e, 1e-9);
    }
}

TEST(TimeDerivatives, MatchFiniteDifferencesOfIntegratedTrajectory) {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int k = 0; k < 20; ++k) {
        const auto x = random_state(rng);
        const ControlInput in{200.0 * uni(rng), 200.0 * uni(rng), 0.1 * uni(rng)};
        const double tau = 0.02 * uni(rng);
        const std::array<double, 9> y0{0.0, x.n, x.beta, x.u, x.v, x.delta, x.omega_f, x.omega_r, 0.0};
        const double h = 1e-6;
        const auto fwd = rk4(y0, in, tau, h / 10, 10);
        const auto bwd = rk4(y0, in, tau, -h / 10, 10);
        const auto r = time_derivatives(x, in, kParams, reference_hard_tire(), reference_soft_tire(), tau);
        const std::array<double, 9> analytic{1.0, r.dn_dt, r.dbeta_dt, r.du_dt, r.dv_dt, r.ddelta_dt,
                                             r.domega_f_dt, r.domega_r_dt, r.ds_dt};
        for (int j = 1; j < 9; ++j) {
            const double fd = (fwd[j] - bwd[j]) / (2 * h);
            EXPECT_NEAR(fd, analytic[j], 1e-4 * std::max(1.0, std::abs(analytic[j]))) << "component " << j;
        }
    }
}

TEST(TimeDerivatives, Errors) {
    const auto soft = reference_soft_tire();
    VehicleState x = VehicleState::rolling(0.5, kParams.r_e);
    EXPECT_EQ(kind_of([&] { time_derivatives(x, {}, kParams, soft, soft, 0.0); }), ErrorKind::DegenerateSpeed);
    x = VehicleState::rolling(10.0, kParams.r_e);
    x.n = 32.0;
    EXPECT_EQ(kind_of([&] { time_derivatives(x, {}, kParams, soft, soft, -1.0 / 32.0); }),
              ErrorKind::SingularProjection);
    x.n = 0.0;
    x.beta = 3.14159265358979 / 2;
    EXPECT_EQ(kind_of([&] { path_derivative(time_derivatives(x, {}, kParams, soft, soft, 0.0)); }),
              ErrorKind::StalledOnPath);
}

TEST(StateDerivative, ChainRule) {
    const auto soft = reference_soft_tire();
    const auto path = Path::straight_arc_straight(10.0, 10.0, 40.0, TurnDirection::Left, 10.0);
    VehicleState x = VehicleState::rolling(12.0, kParams.r_e);
    x.delta = 0.1;
    const ControlInput in{50.0, 80.0, 0.02};
    const auto straight = state_derivative(x, in, kParams, soft, soft, path, 5.0);
    const auto rates = time_derivatives(x, in, kParams, soft, soft, 0.0);
    EXPECT_DOUBLE_EQ(rates.ds_dt, 12.0);
    EXPECT_DOUBLE_EQ(straight.dv_ds, rates.dv_dt / 12.0);
    EXPECT_DOUBLE_EQ(straight.dt_ds * rates.ds_dt, 1.0);
    const auto arc = state_derivative(x, in, kParams, soft, soft, path, 15.0);
    EXPECT_NEAR(arc.dbeta_ds, 0.1 / 12.0 + 1.0 / 40.0, 1e-15);
}

TEST(StateDerivative, SteadyArcKeepsHeadingError) {
    const auto soft = reference_soft_tire();
    for (auto dir : {TurnDirection::Right, TurnDirection::Left}) {
        const auto path = Path::straight_arc_straight(1.0, 100.0, 127.0, dir, 1.0);
        const double tau = path.curvature(50.0);
        VehicleState x = VehicleState::rolling(16.7, kParams.r_e);
        x.u = 0.1;
        x.delta = x.v * tau;  // equals v |tau| on the right arc
        const auto d = state_derivative(x, {}, kParams, soft, soft, path, 50.0);
        EXPECT_NEAR(d.dbeta_ds, 0.0, 1e-6);
    }
}

TEST(Step, EulerUpdate) {
    const VehicleState x{1, 2, 3, 4, 5, 6, 7, 8};
    const StateDerivative d{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    const auto same = step(x, d, 0.0);
    EXPECT_EQ(same.to_array(), x.to_array());
    const auto full = step(x, d, 0.5);
    const auto halves = step(step(x, d, 0.25), d, 0.25);
    for (int k = 0; k < 8; ++k) EXPECT_NEAR(full.to_array()[k], halves.to_array()[k], 1e-12);
    EXPECT_DOUBLE_EQ(full.v, 5.25);
}

TEST(Simulate, CoastingDecelerates) {
    const auto soft = reference_soft_tire();
    const double ds = 0.01;
    const auto path = Path::straight(50.0);
    const std::vector<ControlInput> controls(5000);
    const auto traj = simulate(VehicleState::rolling(20.0, kParams.r_e), controls, path, kParams, soft, soft, ds);
    ASSERT_EQ(traj.states.size(), 5001u);
    for (size_t i = 1; i < traj.states.size(); ++i) {
        EXPECT_LT(traj.states[i].v, traj.states[i - 1].v);
        EXPECT_EQ(traj.states[i].n, 0.0);
        EXPECT_GT(traj.states[i].t, traj.states[i - 1].t);
    }
}

TEST(Simulate, MirroredPathMirrorsLateralTraces) {
    const auto soft = reference_soft_tire();
    const auto hard = reference_hard_tire();
    const auto left = Path::straight_arc_straight(5.0, 20.0, 60.0, TurnDirection::Left, 5.0);
    const auto right = Path::straight_arc_straight(5.0, 20.0, 60.0, TurnDirection::Right, 5.0);
    std::vector<ControlInput> cl, cr;
    for (int i = 0; i < 3000; ++i) {
        const double sigma = i < 500 ? 0.0 : -0.03;
        cl.push_back({40.0, 60.0, sigma});
        cr.push_back({40.0, 60.0, -sigma});
    }
    const auto x0 = VehicleState::rolling(15.0, kParams.r_e);
    const auto a = simulate(x0, cl, left, kParams, hard, soft, 0.01);
    const auto b = simulate(x0, cr, right, kParams, hard, soft, 0.01);
    for (size_t i = 0; i < a.states.size(); ++i) {
        EXPECT_EQ(a.states[i].n, -b.states[i].n);
        EXPECT_EQ(a.states[i].beta, -b.states[i].beta);
        EXPECT_EQ(a.states[i].v, b.states[i].v);
    }
    EXPECT_NE(a.states.back().n, 0.0);
}

TEST(Simulate, Deterministic) {
    const auto soft = reference_soft_tire();
    const auto path = Path::straight_arc_straight(5.0, 10.0, 50.0, TurnDirection::Left, 5.0);
    std::vector<ControlInput> controls(2000, ControlInput{100.0, 120.0, -0.02});
    const auto x0 = VehicleState::rolling(18.0, kParams.r_e);
    const auto a = simulate(x0, controls, path, kParams, soft, soft, 0.01);
    const auto b = simulate(x0, controls, path, kParams, soft, soft, 0.01);
    for (size_t i = 0; i < a.states.size(); ++i) EXPECT_EQ(a.states[i].to_array(), b.states[i].to_array());
}

TEST(Simulate, EulerFirstOrderConvergence) {
    const auto soft = reference_soft_tire();
    const auto hard = reference_hard_tire();
    const double length = 40.0;
    const auto path = Path::straight(length);
    auto final_speed = [&](double ds) {
        const auto steps = static_cast<size_t>(std::llround(length / ds));
        std::vector<ControlInput> controls(steps, ControlInput{250.0, 400.0, 0.01});
        return simulate(VehicleState::rolling(30.0, kParams.r_e), controls, path, kParams, hard, soft, ds)
            .states.back()
            .v;
    };
    const double reference = final_speed(0.0003125);
    const double e1 = std::abs(final_speed(0.005) - reference);
    const double e2 = std::abs(final_speed(0.0025) - reference);
    const double e3 = std::abs(final_speed(0.00125) - reference);
    // Richardson-corrected ratio removes the reference's own first-order error
    const double ratio = (e1 - e2) / (e2 - e3);
    EXPECT_GE(ratio, 1.7);
    EXPECT_LE(ratio, 2.3);
    EXPECT_GE(e1 / e2, 1.7);
    EXPECT_LE(e1 / e2, 2.3);
}

TEST(Simulate, ErrorsCarryStepIndex) {
    const auto soft = reference_soft_tire();
    std::vector<ControlInput> controls(200, ControlInput{-3000.0, -3000.0, 0.0});
    try {
        simulate(VehicleState::rolling(2.0, kParams.r_e), controls, Path::straight(100.0), kParams, soft, soft, 0.01);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateSpeed);
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}
