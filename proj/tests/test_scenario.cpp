#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "twsim/error.hpp"
#include "twsim/scenario.hpp"

using namespace twsim;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::InvalidInput;
}

Scenario make(ScenarioKind kind, double kmh, double zeta) {
    Scenario s;
    s.kind = kind;
    s.speed_kmh = kmh;
    s.zeta = zeta;
    return s;
}

// Straight-line deceleration from v0 at constant a, sampled every ds.
OcpSolution synthetic_braking(double v0, double a, double ds, int d, double v_floor) {
    OcpSolution sol;
    sol.delta_s = ds;
    double t = 0.0;
    for (int i = 0; i <= d; ++i) {
        const double s = i * ds;
        const double v = std::max(v_floor, std::sqrt(std::max(0.0, v0 * v0 - 2.0 * a * s)));
        VehicleState x;
        x.v = v;
        x.t = t;
        sol.s.push_back(s);
        sol.states.push_back(x);
        sol.a_v.push_back(-a);
        t += ds / v;
    }
    sol.inputs.resize(sol.states.size());
    sol.forces.resize(sol.states.size());
    return sol;
}

}  // namespace

TEST(Scenario, PairedRadius) {
    EXPECT_EQ(paired_radius(30.0), 32.0);
    EXPECT_EQ(paired_radius(60.0), 127.0);
    EXPECT_EQ(paired_radius(120.0), 510.0);
    EXPECT_EQ(kind_of([] { paired_radius(50.0); }), ErrorKind::InvalidInput);
}

TEST(Scenario, Keys) {
    EXPECT_EQ(make(ScenarioKind::Curved, 60.0, 1.0).key(), "curved_60kmh_z1.0");
    EXPECT_EQ(make(ScenarioKind::Straight, 120.0, 0.5).key(), "straight_120kmh_z0.5");
    EXPECT_EQ(make(ScenarioKind::Braking, 30.0, 0.75).key(), "braking_30kmh_z0.75");
}

TEST(Scenario, NameRoundTrips) {
    for (auto k : {ScenarioKind::Braking, ScenarioKind::Straight, ScenarioKind::Curved}) {
        EXPECT_EQ(scenario_kind_from_string(to_string(k)), k);
    }
    for (auto v : {VehicleKind::Base, VehicleKind::LowWear}) EXPECT_EQ(vehicle_kind_from_string(to_string(v)), v);
    EXPECT_EQ(kind_of([] { scenario_kind_from_string("oval"); }), ErrorKind::InvalidInput);
    EXPECT_EQ(kind_of([] { vehicle_kind_from_string("hard"); }), ErrorKind::InvalidInput);
}

TEST(Scenario, PathsAndSteps) {
    const Scenario st = make(ScenarioKind::Straight, 60.0, 1.0);
    EXPECT_DOUBLE_EQ(st.path().total_length(), 400.0);
    EXPECT_EQ(st.steps(), 400);

    const Scenario cv = make(ScenarioKind::Curved, 60.0, 1.0);
    EXPECT_NEAR(cv.path().total_length(), 200.0 + 0.5 * std::numbers::pi * 127.0, 1e-9);
    EXPECT_NEAR(cv.path().curvature(150.0), -1.0 / 127.0, 1e-12);
    EXPECT_EQ(cv.path().curvature(50.0), 0.0);

    // braking path: 1.4 times the hard-tire operating stopping distance
    const Scenario br = make(ScenarioKind::Braking, 60.0, 0.5);
    const double v = 60.0 / 3.6;
    const double a = 0.85 * 0.5 * reference_hard_tire().longitudinal.D * br.params.g;
    EXPECT_NEAR(br.path().total_length(), 1.4 * v * v / (2.0 * a), 1e-9);
    EXPECT_EQ(br.steps(), 100);
}

TEST(Scenario, ValidateRejectsBadValues) {
    auto bad = [](auto mutate) {
        Scenario s = make(ScenarioKind::Straight, 60.0, 1.0);
        mutate(s);
        return kind_of([&] { s.validate(); });
    };
    EXPECT_EQ(bad([](Scenario& s) { s.zeta = 0.0; }), ErrorKind::InvalidInput);
    EXPECT_EQ(bad([](Scenario& s) { s.zeta = 1.2; }), ErrorKind::InvalidInput);
    EXPECT_EQ(bad([](Scenario& s) { s.speed_kmh = 2.0; }), ErrorKind::InvalidInput);
    EXPECT_EQ(bad([](Scenario& s) { s.step = 0.0; }), ErrorKind::InvalidInput);
    EXPECT_EQ(bad([](Scenario& s) { s.braking_steps = 1; }), ErrorKind::InvalidInput);
    EXPECT_EQ(bad([](Scenario& s) {
                  s.kind = ScenarioKind::Curved;
                  s.speed_kmh = 50.0;
              }),
              ErrorKind::InvalidInput);
}

TEST(CruisingState, BalancesDrag) {
    const VehicleParams p;
    for (double v : {1.0, 8.33, 16.67, 33.3}) {
        const VehicleState x = cruising_state(v, p, reference_hard_tire(), reference_soft_tire());
        const TimeRates r = time_derivatives(x, {}, p, reference_hard_tire(), reference_soft_tire(), 0.0);
        EXPECT_NEAR(r.dv_dt, 0.0, 1e-9) << v;
        EXPECT_GT(x.omega_f * p.r_e, v);
        EXPECT_GT(x.omega_r * p.r_e, v);
    }
}

TEST(DriverProblem, Structure) {
    const OcpProblem br = driver_problem(make(ScenarioKind::Braking, 60.0, 0.5), VehicleKind::LowWear);
    EXPECT_EQ(br.objective, ObjectiveKind::MinSpeed);
    EXPECT_FALSE(br.comfort.enabled);
    EXPECT_DOUBLE_EQ(br.front.zeta, 0.5);
    EXPECT_DOUBLE_EQ(br.front.longitudinal.D, reference_hard_tire().longitudinal.D);
    EXPECT_DOUBLE_EQ(br.rear.longitudinal.D, reference_soft_tire().longitudinal.D);
    EXPECT_DOUBLE_EQ(br.initial.v, 60.0 / 3.6);

    const OcpProblem st = driver_problem(make(ScenarioKind::Straight, 60.0, 1.0), VehicleKind::Base);
    EXPECT_EQ(st.objective, ObjectiveKind::MinTime);
    EXPECT_DOUBLE_EQ(st.front.longitudinal.D, reference_soft_tire().longitudinal.D);
    EXPECT_DOUBLE_EQ(st.initial.v, st.speed.v_min);
    ASSERT_TRUE(st.final_speed.has_value());
    EXPECT_DOUBLE_EQ(*st.final_speed, st.speed.v_min);
    EXPECT_DOUBLE_EQ(st.speed.v_max, 60.0 / 3.6);

    const OcpProblem cv = driver_problem(make(ScenarioKind::Curved, 30.0, 1.0), VehicleKind::Base);
    EXPECT_DOUBLE_EQ(cv.initial.v, 30.0 / 3.6);
    EXPECT_FALSE(cv.final_speed.has_value());
}

TEST(StoppingDistance, ConstantDecelerationOracle) {
    const double v0 = 60.0 / 3.6, a = 8.0, ds = 0.2;
    const OcpSolution sol = synthetic_braking(v0, a, ds, 150, 1.0);
    // first station whose successor is within the tolerance of the floor
    size_t i = 0;
    while (sol.states[i + 1].v > 1.0 + kFloorTolerance) ++i;
    const double expected = sol.s[i] + sol.states[i].v * sol.states[i].v / (2.0 * a);
    EXPECT_DOUBLE_EQ(stopping_distance(sol, 1.0), expected);
    // the extrapolation lands within one step of the exact stop
    EXPECT_NEAR(stopping_distance(sol, 1.0), v0 * v0 / (2.0 * a), ds);
}

TEST(StoppingDistance, ThrowsWhenFloorNotReached) {
    const OcpSolution sol = synthetic_braking(20.0, 1.0, 0.5, 20, 1.0);
    EXPECT_EQ(kind_of([&] { stopping_distance(sol, 1.0); }), ErrorKind::InvalidInput);
}

TEST(Reduction, Percent) {
    EXPECT_DOUBLE_EQ(reduction_percent(200.0, 86.0), 57.0);
    EXPECT_DOUBLE_EQ(reduction_percent(100.0, 100.0), 0.0);
    EXPECT_EQ(kind_of([] { reduction_percent(0.0, 1.0); }), ErrorKind::InvalidInput);
}

TEST(TrajectoryMetrics, MatchesDirectSums) {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> force(-3000.0, 3000.0), dt(0.05, 0.2);
    OcpSolution sol;
    double t = 0.0;
    for (int i = 0; i <= 30; ++i) {
        VehicleState x;
        x.t = t;
        x.v = 10.0;
        sol.states.push_back(x);
        ForceReport f;
        f.forces.f_vf = force(rng);
        f.forces.f_vr = force(rng);
        sol.forces.push_back(f);
        sol.a_v.push_back(force(rng) / 1000.0);
        t += dt(rng);
    }
    Scenario s = make(ScenarioKind::Straight, 60.0, 1.0);
    for (auto vehicle : {VehicleKind::Base, VehicleKind::LowWear}) {
        const EmissionParams& pf = vehicle == VehicleKind::Base ? s.emission.soft : s.emission.hard;
        double weighted = 0.0, plain = 0.0, front = 0.0, peak = 0.0;
        for (size_t i = 0; i + 1 < sol.states.size(); ++i) {
            const double h = sol.states[i + 1].t - sol.states[i].t;
            const double ef = particle_number(sol.forces[i].forces.f_vf, pf);
            const double er = particle_number(sol.forces[i].forces.f_vr, s.emission.soft);
            weighted += (ef + er) * h;
            plain += ef + er;
            front += ef * h;
        }
        for (double a : sol.a_v) peak = std::max(peak, -a);
        const RunMetrics m = trajectory_metrics(s, sol, vehicle);
        EXPECT_NEAR(m.pn_total, weighted, 1e-9 * weighted);
        EXPECT_NEAR(m.pn_unweighted, plain, 1e-9 * plain);
        EXPECT_NEAR(m.pn_front, front, 1e-9 * front);
        EXPECT_NEAR(m.pn_front + m.pn_rear, m.pn_total, 1e-9 * weighted);
        EXPECT_DOUBLE_EQ(m.peak_deceleration, peak);
        EXPECT_DOUBLE_EQ(m.duration, sol.states.back().t);
    }
}

TEST(MeasurementsAt, MatchesTimeDerivatives) {
    const Scenario s = make(ScenarioKind::Straight, 30.0, 1.0);
    const OcpProblem p = driver_problem(s, VehicleKind::Base);
    OcpSolution sol;
    VehicleState x = cruising_state(8.0, p.params, p.front, p.rear);
    x.u = 0.1;
    x.delta = 0.02;
    sol.states.push_back(x);
    sol.inputs.push_back({200.0, 150.0, 0.01});
    const Measurements m = measurements_at(sol, 0, p);
    const TimeRates r = time_derivatives(x, sol.inputs[0], p.params, p.front, p.rear, 0.0);
    EXPECT_DOUBLE_EQ(m.sigma, 0.01);
    EXPECT_DOUBLE_EQ(m.u, 0.1);
    EXPECT_DOUBLE_EQ(m.v, x.v);
    EXPECT_DOUBLE_EQ(m.delta, 0.02);
    EXPECT_NEAR(m.du_dt, r.du_dt, 1e-12);
    EXPECT_NEAR(m.dv_dt, r.dv_dt, 1e-12);
}

TEST(Pipeline, StraightRunStructure) {
    const Scenario s = make(ScenarioKind::Straight, 60.0, 1.0);
    const ScenarioResult r = run_scenario(s);
    ASSERT_TRUE(r.base.converged) << r.base.message;
    ASSERT_TRUE(r.low_wear.solution.converged) << r.low_wear.solution.message;
    const double vmax = s.speed();
    double top = 0.0;
    for (const auto& x : r.base.states) {
        EXPECT_LE(x.v, vmax + 1e-3);
        top = std::max(top, x.v);
    }
    EXPECT_NEAR(top, vmax, 1e-2);
    EXPECT_NEAR(r.base.states.back().v, 1.0, 1e-4);
    for (double a : r.base.a_v) EXPECT_LE(a, ComfortLimits{}.lon_accel + 1e-3);
    // the low-wear vehicle follows the base speed profile
    for (size_t i = 0; i < r.base.states.size(); ++i) {
        EXPECT_NEAR(r.low_wear.solution.states[i].v, r.base.states[i].v, 0.1);
    }
    EXPECT_EQ(r.low_wear.decisions.size(), r.base.states.size());
    EXPECT_LT(r.low_metrics.pn_total, r.base_metrics.pn_total);
}

TEST(Pipeline, CurvedArcHoldsLateralAcceleration) {
    const Scenario s = make(ScenarioKind::Curved, 60.0, 1.0);
    const OcpSolution base = generate_driver_trajectory(s);
    ASSERT_TRUE(base.converged) << base.message;
    // middle of the quarter arc
    const double s_mid = 100.0 + 0.25 * std::numbers::pi * 127.0;
    size_t i = 0;
    while (base.s[i] < s_mid) ++i;
    const double v = base.states[i].v;
    EXPECT_NEAR(v, s.speed(), 0.05);
    EXPECT_NEAR(std::abs(base.a_u[i]), v * v / 127.0, 0.05);
}

TEST(Pipeline, BrakingDistanceRatio) {
    const ScenarioResult r = run_scenario(make(ScenarioKind::Braking, 30.0, 1.0));
    ASSERT_TRUE(r.base.converged) << r.base.message;
    ASSERT_TRUE(r.low_wear.solution.converged) << r.low_wear.solution.message;
    const double ratio = r.low_metrics.stopping_distance / r.base_metrics.stopping_distance;
    EXPECT_GE(ratio, 1.08);
    EXPECT_LE(ratio, 1.13);
    EXPECT_LT(r.low_metrics.peak_deceleration, r.base_metrics.peak_deceleration);
    EXPECT_TRUE(r.low_wear.decisions.empty());
}
