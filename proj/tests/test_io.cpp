#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "twsim/error.hpp"
#include "twsim/io.hpp"

using namespace twsim;
namespace fs = std::filesystem;

namespace {

const fs::path kData = TWSIM_DATA_DIR;

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::InvalidInput;
}

std::string error_text(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

class TempDir {
  public:
    TempDir()
        : path_(fs::temp_directory_path() /
                (std::string("twsim_io_") + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }
    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = path_ / name;
        fs::create_directories(p.parent_path());
        std::ofstream(p) << text;
        return p;
    }

  private:
    fs::path path_;
};

Json summary(const std::string& kind, double kmh, double zeta, const std::string& vehicle, double pn,
             double stop = 10.0) {
    Scenario s;
    s.kind = scenario_kind_from_string(kind);
    s.speed_kmh = kmh;
    s.zeta = zeta;
    Json j;
    j["key"] = run_key(s, vehicle_kind_from_string(vehicle));
    j["scenario"] = s.key();
    j["kind"] = kind;
    j["vehicle"] = vehicle;
    j["speed_kmh"] = kmh;
    j["zeta"] = zeta;
    j["metrics"] = Json{{"stopping_distance", kind == "braking" ? Json(stop) : Json(nullptr)},
                        {"peak_deceleration", 5.0},
                        {"pn_total", pn},
                        {"pn_unweighted", 2.0 * pn}};
    return j;
}

}  // namespace

TEST(Sha256, KnownDigests) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ParameterFiles, TireRoundTrip) {
    for (const TireModel& t : {reference_soft_tire(), reference_hard_tire()}) {
        const TireModel back = tire_from_json(Json::parse(tire_to_json(t).dump()));
        EXPECT_EQ(back.longitudinal.B, t.longitudinal.B);
        EXPECT_EQ(back.longitudinal.E, t.longitudinal.E);
        EXPECT_EQ(back.lateral.B, t.lateral.B);
        EXPECT_EQ(back.slip_ratio_limit, t.slip_ratio_limit);
        EXPECT_EQ(back.slip_angle_limit, t.slip_angle_limit);
    }
}

TEST(ParameterFiles, ShippedDataMatchesReferenceCalibration) {
    auto tire = [](const char* f) { return tire_from_json(Json::parse(read_file(kData / "tires" / f))); };
    auto em = [](const char* f) { return emission_from_json(Json::parse(read_file(kData / "emission" / f))); };
    for (auto [file, ref] : {std::pair{"soft.json", reference_soft_tire()}, {"hard.json", reference_hard_tire()}}) {
        const TireModel t = tire(file);
        EXPECT_EQ(t.longitudinal.B, ref.longitudinal.B) << file;
        EXPECT_EQ(t.longitudinal.C, ref.longitudinal.C) << file;
        EXPECT_EQ(t.longitudinal.D, ref.longitudinal.D) << file;
        EXPECT_EQ(t.lateral.B, ref.lateral.B) << file;
        EXPECT_EQ(t.slip_ratio_limit, ref.slip_ratio_limit) << file;
        EXPECT_EQ(t.slip_angle_limit, ref.slip_angle_limit) << file;
    }
    for (auto [file, ref] :
         {std::pair{"soft.json", reference_soft_emission()}, {"hard.json", reference_hard_emission()}}) {
        const EmissionParams p = em(file);
        EXPECT_DOUBLE_EQ(p.p2, ref.p2) << file;
        EXPECT_DOUBLE_EQ(p.p1, ref.p1) << file;
        EXPECT_DOUBLE_EQ(p.p0, ref.p0) << file;
    }
}

TEST(ParameterFiles, StrictParsing) {
    Json t = tire_to_json(reference_soft_tire());
    t["extra"] = 1;
    EXPECT_EQ(kind_of([&] { tire_from_json(t); }), ErrorKind::InvalidConfig);
    t = tire_to_json(reference_soft_tire());
    t["longitudinal"]["B"] = "19";
    EXPECT_NE(error_text([&] { tire_from_json(t); }).find("'B'"), std::string::npos);
    t = tire_to_json(reference_soft_tire());
    t["slip_ratio_limit"] = -0.1;
    EXPECT_EQ(kind_of([&] { tire_from_json(t); }), ErrorKind::InvalidConfig);
    EXPECT_EQ(kind_of([] { emission_from_json(Json{{"p2", 1.0}, {"p1", 0.0}}); }), ErrorKind::InvalidConfig);
    EXPECT_EQ(kind_of([] { solver_from_json(Json{{"max_iter", 1.5}}); }), ErrorKind::InvalidConfig);
    EXPECT_EQ(kind_of([] { solver_from_json(Json{{"delta_s", 0.0}}); }), ErrorKind::InvalidConfig);
    const SolverFile sf = solver_from_json(Json{{"max_iter", 50}, {"delta_s", 0.5}});
    EXPECT_EQ(sf.options.max_iter, 50);
    EXPECT_EQ(sf.delta_s, 0.5);
}

TEST(Config, ShippedConfigsLoad) {
    int count = 0;
    for (const auto& e : fs::directory_iterator(kData / "configs")) {
        if (e.path().filename() == "solver.json") continue;
        const ScenarioConfig c = load_config(e.path());
        EXPECT_EQ(c.scenario.key() + ".json", e.path().filename().string());
        EXPECT_EQ(c.vehicle, VehicleKind::LowWear);
        EXPECT_EQ(c.provenance["config_sha256"], sha256_hex(read_file(e.path())));
        EXPECT_EQ(c.provenance["files"].size(), 5u);
        ++count;
    }
    EXPECT_EQ(count, 18);
}

TEST(Config, ResolvesFilesAndRecordsHashes) {
    TempDir dir;
    const std::string tire = tire_to_json(reference_hard_tire()).dump();
    dir.write("p/hard.json", tire);
    dir.write("p/soft.json", tire_to_json(reference_soft_tire()).dump());
    dir.write("s.json", R"({"max_iter": 77, "delta_s": 0.5})");
    const auto cfg = dir.write("c.json", R"({"kind": "curved", "speed_kmh": 30, "zeta": 0.5, "vehicle": "base",
        "tires": {"soft": "p/soft.json", "hard": "p/hard.json"}, "solver": "s.json"})");
    const ScenarioConfig c = load_config(cfg);
    EXPECT_EQ(c.scenario.kind, ScenarioKind::Curved);
    EXPECT_EQ(c.scenario.arc_radius(), 32.0);
    EXPECT_EQ(c.vehicle, VehicleKind::Base);
    EXPECT_EQ(c.scenario.solver.max_iter, 77);
    EXPECT_EQ(c.scenario.step, 0.5);
    EXPECT_EQ(c.provenance["files"]["tires.hard"]["sha256"], sha256_hex(tire));
    EXPECT_EQ(c.provenance["files"]["tires.hard"]["path"], "p/hard.json");
}

TEST(Config, Errors) {
    TempDir dir;
    auto load = [&](const std::string& text) { return kind_of([&] { load_config(dir.write("c.json", text)); }); };
    EXPECT_EQ(load(R"({"kind": "oval", "speed_kmh": 30, "zeta": 1})"), ErrorKind::InvalidConfig);
    EXPECT_EQ(load(R"({"kind": "straight", "speed_kmh": 30, "zeta": 1, "colour": 1})"), ErrorKind::InvalidConfig);
    EXPECT_EQ(load(R"({"kind": "straight", "zeta": 1})"), ErrorKind::InvalidConfig);
    EXPECT_EQ(load(R"({"kind": "straight", "speed_kmh": 30, "zeta": 2})"), ErrorKind::InvalidConfig);
    EXPECT_EQ(load(R"({"kind": "curved", "speed_kmh": 50, "zeta": 1})"), ErrorKind::InvalidConfig);
    EXPECT_EQ(load(R"({"kind": "straight", "speed_kmh": 30, "zeta": 1, "solver": "nope.json"})"),
              ErrorKind::InvalidConfig);
    EXPECT_EQ(load("{not json"), ErrorKind::InvalidConfig);
    EXPECT_EQ(kind_of([&] { load_config(dir.path() / "absent.json"); }), ErrorKind::InvalidConfig);
    const std::string msg = error_text([&] { load_config(dir.write("c.json", R"({"kind": "x", "speed_kmh": 30, "zeta": 1})")); });
    EXPECT_NE(msg.find("kind"), std::string::npos);
}

TEST(Compare, ReductionAndDistances) {
    const Json row = compare_summaries(summary("braking", 60, 1.0, "base", 200.0, 13.0),
                                       summary("braking", 60, 1.0, "low_wear", 86.0, 14.3));
    EXPECT_DOUBLE_EQ(row["reduction_percent"].get<double>(), 57.0);
    EXPECT_EQ(row["reduction_rounded"], 57);
    EXPECT_DOUBLE_EQ(row["reduction_unweighted_percent"].get<double>(), 57.0);
    EXPECT_NEAR(row["stopping_distance_ratio"].get<double>(), 1.1, 1e-12);
    EXPECT_NEAR(row["stopping_distance_delta"].get<double>(), 1.3, 1e-12);
    EXPECT_FALSE(compare_summaries(summary("straight", 60, 1.0, "base", 2.0), summary("straight", 60, 1.0, "low_wear", 1.0))
                     .contains("stopping_distance_ratio"));
}

TEST(Compare, KeyMismatch) {
    EXPECT_EQ(kind_of([] {
                  compare_summaries(summary("straight", 60, 1.0, "base", 2.0), summary("straight", 30, 1.0, "low_wear", 1.0));
              }),
              ErrorKind::KeyMismatch);
    EXPECT_EQ(kind_of([] {
                  compare_summaries(summary("straight", 60, 1.0, "base", 2.0), summary("curved", 60, 1.0, "low_wear", 1.0));
              }),
              ErrorKind::KeyMismatch);
    EXPECT_EQ(kind_of([] {
                  compare_summaries(summary("straight", 60, 1.0, "base", 2.0), summary("straight", 60, 1.0, "base", 1.0));
              }),
              ErrorKind::KeyMismatch);
}

TEST(Report, FullGrid) {
    std::vector<Json> runs;
    for (double z : {0.5, 1.0}) {
        for (double v : {30.0, 60.0, 120.0}) {
            runs.push_back(summary("straight", v, z, "base", 100.0 * v));
            runs.push_back(summary("straight", v, z, "low_wear", 50.0 * v));
        }
    }
    const Report r = build_report(runs);
    EXPECT_NE(r.text.find("straight path"), std::string::npos);
    EXPECT_EQ(r.text.find("braking"), std::string::npos);
    std::istringstream csv(r.csv);
    std::string line;
    int rows = 0;
    std::getline(csv, line);
    EXPECT_EQ(line.substr(0, 16), "table,kind,zeta,");
    while (std::getline(csv, line)) {
        EXPECT_EQ(line.substr(0, 11), "3,straight,");
        EXPECT_NE(line.find(",50,50,"), std::string::npos) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 6);
}

TEST(Report, MissingRunsAreNamed) {
    std::vector<Json> runs{summary("curved", 60, 1.0, "base", 2.0), summary("curved", 60, 1.0, "low_wear", 1.0)};
    const std::string msg = error_text([&] { build_report(runs); });
    EXPECT_NE(msg.find("curved zeta=0.5 speed=30 base"), std::string::npos);
    EXPECT_EQ(msg.find("zeta=1 speed=60"), std::string::npos);
    EXPECT_EQ(kind_of([&] { build_report(runs); }), ErrorKind::MissingRun);
}

TEST(Report, EmptyIsEmpty) {
    const Report r = build_report({});
    EXPECT_TRUE(r.text.empty());
    EXPECT_EQ(std::count(r.csv.begin(), r.csv.end(), '\n'), 1);
}

TEST(CsvReaders, ParseAndReject) {
    std::istringstream ok("slip,mu\n0.01, 0.5\n\n0.02,0.9\n");
    const auto s = read_slip_csv(ok);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[1].slip, 0.02);
    EXPECT_EQ(s[1].mu, 0.9);
    std::istringstream em("force_n,pn\n100,5\n");
    EXPECT_EQ(read_emission_csv(em).size(), 1u);

    for (const char* bad : {"", "slip,mu,x\n", "mu,slip\n1,2\n", "slip,mu\n1\n", "slip,mu\n1,abc\n", "slip,mu\n1,2x\n",
                            "slip,mu\n1,nan\n"}) {
        std::istringstream in(bad);
        EXPECT_EQ(kind_of([&] { read_slip_csv(in); }), ErrorKind::InvalidInput) << bad;
    }
}

TEST(TrajectoryCsv, HeaderAndRows) {
    Scenario s;
    OcpSolution sol;
    for (int i = 0; i < 3; ++i) {
        sol.s.push_back(i);
        sol.states.push_back(VehicleState::rolling(10.0, s.params.r_e));
        sol.inputs.push_back({});
        sol.forces.push_back({});
    }
    std::vector<ControlDecision> decisions(2);
    std::ostringstream out;
    write_trajectory_csv(out, s, sol, VehicleKind::LowWear, &decisions);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    const size_t columns = std::count(line.begin(), line.end(), ',') + 1;
    EXPECT_EQ(columns, 26u);
    int rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1, columns) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 3);
}
