#include "arz/config.hpp"
#include "arz/csv.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace arz;

namespace {

std::string message_of(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "arz_config_test";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Config, ShippedFileMatchesBuiltInScenario) {
  const ScenarioFile f = load_scenario(ARZ_CONFIG);
  const Scenario& a = f.scenario;
  const Scenario b = Scenario::reference();
  EXPECT_EQ(a.name, b.name);
  EXPECT_DOUBLE_EQ(a.params.v_f, b.params.v_f);
  EXPECT_DOUBLE_EQ(a.params.rho_m, b.params.rho_m);
  EXPECT_DOUBLE_EQ(a.params.T, b.params.T);
  EXPECT_DOUBLE_EQ(a.params.l, b.params.l);
  EXPECT_EQ(a.topo.n_u(), b.topo.n_u());
  EXPECT_EQ(a.input_at(0), b.input_at(0));
  ASSERT_TRUE(a.jam);
  EXPECT_EQ(a.jam->start, b.jam->start);
  EXPECT_EQ(a.jam->end, b.jam->end);
  EXPECT_EQ(a.jam->scale, b.jam->scale);
  EXPECT_EQ(a.sensors.fixed_segments, b.sensors.fixed_segments);
  EXPECT_EQ(a.sensors.mobile_start, b.sensors.mobile_start);
  EXPECT_FALSE(a.sensors.rotation_period);
  EXPECT_EQ(a.seeds, b.seeds);
  EXPECT_EQ(a.duration, 500);
  EXPECT_EQ(a.estimators, estimator_names());
  EXPECT_EQ(a.mhe.horizon, 4);
  EXPECT_EQ(a.estimator.ensemble_size, 100);
  EXPECT_EQ(f.sweeps.rotation_periods.size(), 6u);
  EXPECT_FALSE(f.sweeps.rotation_periods.front());
}

TEST(Config, EmptyObjectGivesDefaults) {
  const Scenario s = parse_scenario("{}").scenario;
  EXPECT_EQ(s.input_at(0), Scenario::reference().input_at(0));
  EXPECT_EQ(s.duration, Scenario::reference().duration);
}

TEST(Config, ParseErrorReportsLineAndColumn) {
  const std::string m = message_of("{\n  \"params\": {\n    \"v_f\": 102,,\n  }\n}");
  EXPECT_TRUE(contains(m, "line 3, column")) << m;
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_TRUE(contains(message_of(R"({"sensorz": {}})"), "sensorz"));
  EXPECT_TRUE(contains(message_of(R"({"params": {"vf": 100}})"), "vf"));
  EXPECT_TRUE(contains(message_of(R"({"estimators": [{"kind": "mhe", "q": 1}]})"), "'q'"));
}

TEST(Config, CflViolationRejected) {
  EXPECT_FALSE(message_of(R"({"params": {"T_s": 5}})").empty());
  EXPECT_TRUE(message_of(R"({"params": {"T_s": 2}, "jam": null, "duration_s": 100, "warmup_s": 100,
    "sensors": {"mobile": null}})").empty());
}

TEST(Config, TimesMustBeWholeSteps) {
  EXPECT_TRUE(contains(message_of(R"({"duration_s": 10.5})"), "whole number"));
  EXPECT_TRUE(contains(message_of(R"({"sensors": {"mobile": {"period_s": 0}}})"), "at least one"));
  const Scenario s = parse_scenario(R"({"sensors": {"mobile": {"period_s": 5}}})").scenario;
  EXPECT_EQ(s.sensors.rotation_period, 5);
}

TEST(Config, MobileCountMustMatchStart) {
  EXPECT_TRUE(contains(message_of(R"({"sensors": {"mobile": {"count": 2, "start": [1, 3, 7]}}})"), "count"));
  const Scenario s = parse_scenario(R"({"sensors": {"mobile": {"count": 2}}})").scenario;
  EXPECT_EQ(s.sensors.mobile_start, (std::vector<int>{1, 3}));
  const Scenario none = parse_scenario(R"({"sensors": {"mobile": null}})").scenario;
  EXPECT_TRUE(none.sensors.mobile_start.empty());
}

TEST(Config, SensorPlacementValidated) {
  EXPECT_FALSE(message_of(R"({"sensors": {"mobile": {"start": [1, 1, 3]}}})").empty());
  EXPECT_FALSE(message_of(R"({"sensors": {"fixed": [13]}})").empty());
  EXPECT_FALSE(message_of(R"({"sweeps": {"spacing": {"starts": [[1, 9]]}}})").empty());
}

TEST(Config, EstimatorList) {
  const Scenario s = parse_scenario(R"({"estimators": [{"kind": "ekf", "q": 2}, {"kind": "ukf", "q": 2}]})").scenario;
  EXPECT_EQ(s.estimators, (std::vector<std::string>{"ekf", "ukf"}));
  EXPECT_EQ(s.estimator.q, 2.0);
  EXPECT_TRUE(contains(message_of(R"({"estimators": [{"kind": "ekf", "q": 1}, {"kind": "enkf", "q": 3}]})"), "differs"));
  EXPECT_TRUE(contains(message_of(R"({"estimators": [{"kind": "kalman"}]})"), "unknown estimator"));
  EXPECT_TRUE(contains(message_of(R"({"estimators": [{"kind": "ekf"}, {"kind": "ekf"}]})"), "twice"));
  EXPECT_FALSE(message_of(R"({"estimators": [{"kind": "enkf", "ensemble_size": 1}]})").empty());
  EXPECT_FALSE(message_of(R"({"estimators": []})").empty());
}

TEST(Config, TypeErrorsAreConfigErrors) {
  EXPECT_FALSE(message_of(R"({"noise": {"std": "loud"}})").empty());
  EXPECT_FALSE(message_of(R"({"noise": {"std": -1}})").empty());
  EXPECT_FALSE(message_of(R"([1, 2])").empty());
}

TEST(Config, CustomTopologyAndInputs) {
  const Scenario s = parse_scenario(R"({
    "topology": {"n_mainline": 4, "off_ramps": [{"at": 2, "alpha": 0.2}]},
    "inputs": {"constant": {"demand_in": 3000, "rho_out": 10, "off_ramps_rho_out": [5]}},
    "sensors": {"fixed": [4, 5]}
  })").scenario;
  EXPECT_EQ(s.topo.n_segments(), 5);
  EXPECT_FALSE(s.jam);
  EXPECT_EQ(s.input_at(0).size(), s.topo.n_u());
  EXPECT_EQ(s.input_at(0)[0], 3000.0);
  EXPECT_TRUE(contains(message_of(R"({"topology": {"n_mainline": 4, "off_ramps": [{"at": 2, "alpha": 0.2}]},
    "inputs": {"constant": {"off_ramps_rho_out": [5, 6]}}})"),
                       "per off-ramp"));
}

TEST(Config, SeriesCsvRelativeToConfig) {
  const auto dir = temp_dir();
  const Scenario base = Scenario::reference();
  {
    std::ofstream csv(dir / "inputs.csv");
    csv << "demand_in,w_in,rho_out,ramp_demand,ramp_w,off1,off2\n";
    for (int k = 0; k <= 20; ++k) {
      Vector u = base.input_at(0);
      u[0] = 8000.0 + k;
      for (int i = 0; i < u.size(); ++i) csv << (i ? "," : "") << fmt_num(u[i]);
      csv << "\n";
    }
    std::ofstream cfg(dir / "series.json");
    cfg << R"({"inputs": {"series": "inputs.csv"}, "duration_s": 20, "jam": null})";
  }
  const Scenario s = load_scenario((dir / "series.json").string()).scenario;
  ASSERT_EQ(s.input_series.size(), 21u);
  EXPECT_EQ(s.input_at(7)[0], 8007.0);
  EXPECT_EQ(s.input_at(7)[1], base.input_at(0)[1]);

  {
    std::ofstream bad(dir / "bad.csv");
    bad << "h\n1,2,x,4,5,6,7\n";
    std::ofstream cfg(dir / "bad.json");
    cfg << R"({"inputs": {"series": "bad.csv"}})";
  }
  try {
    load_scenario((dir / "bad.json").string());
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(contains(e.what(), "line 2")) << e.what();
  }
  // length must match the duration
  {
    std::ofstream cfg(dir / "short.json");
    cfg << R"({"inputs": {"series": "inputs.csv"}, "duration_s": 30, "jam": null})";
  }
  EXPECT_THROW(load_scenario((dir / "short.json").string()), ConfigError);
  EXPECT_THROW(load_scenario((dir / "missing.json").string()), ConfigError);
}

TEST(Csv, NumberFormattingAndHeaders) {
  EXPECT_EQ(fmt_num(0.1), "0.1");
  EXPECT_EQ(fmt_num(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(trajectory_header(), "step,segment_id,rho,psi,speed");
  EXPECT_EQ(sweep_header(),
            "scenario,estimator,additional_sensors,period_s,start,noise_std,n_seeds,rmse_rho,rmse_v,mean_step_time_s,"
            "flags");
}

TEST(Csv, TrajectoryHasOneRowPerSegmentAndStep) {
  Scenario sc = Scenario::reference();
  sc.duration = 5;
  sc.jam.reset();
  const Truth tr = generate_truth(sc);
  std::ostringstream os;
  write_trajectory_csv(os, tr.x, sc.params);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  std::getline(is, line);
  EXPECT_EQ(line, trajectory_header());
  while (std::getline(is, line)) ++n;
  EXPECT_EQ(n, 5 * sc.topo.n_segments());
}
