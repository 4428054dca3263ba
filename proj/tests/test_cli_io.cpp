#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "spatialvb/experiment.hpp"

using namespace spatialvb;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() /
                     ("spatialvb_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(SPATIALVB_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& name, const Json& j) {
  const fs::path p = dir / name;
  write_text(p, j.dump(2));
  return p;
}

Json small_sim(const std::string& mech, std::uint64_t seed = 3) {
  Json m = mech == "MAR" ? Json{{"type", "MAR"}, {"missing_fraction", 0.25}}
                         : Json{{"type", "MNAR"}, {"psi_0", 1.0}, {"psi_xstar", 0.5}, {"psi_y", -0.1}};
  return Json{{"side", 5}, {"r", 2}, {"rho_true", 0.6}, {"mechanism", m}, {"seed", seed}};
}

std::string slurp(const fs::path& p) { return read_text(p); }

}  // namespace

TEST_CASE("CSV parsing") {
  std::istringstream ok("a,b\n1,NA\n2.5,-3e2\nna,4\n");
  const CsvTable t = read_csv(ok, true);
  CHECK(t.header == std::vector<std::string>{"a", "b"});
  CHECK(t.values.rows() == 3);
  CHECK(std::isnan(t.values(0, 1)));
  CHECK(std::isnan(t.values(2, 0)));
  CHECK(t.values(1, 1) == -300.0);

  std::istringstream na_forbidden("a\nNA\n");
  CHECK_THROWS_AS(read_csv(na_forbidden, false), IoError);
  std::istringstream empty_field("a,b\n1,\n");
  CHECK_THROWS_AS(read_csv(empty_field, true), IoError);
  std::istringstream ragged("a,b\n1,2\n3\n");
  CHECK_THROWS_AS(read_csv(ragged, true), IoError);
  std::istringstream junk("a\n1\nfoo\n");
  try {
    read_csv(junk, true, "junk.csv");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
  std::istringstream nothing("");
  CHECK_THROWS_AS(read_csv(nothing, true), IoError);
}

TEST_CASE("CSV round trip keeps NA and exact reals") {
  Matrix m(2, 2);
  m << 0.1, std::nan(""), -1.0 / 3.0, 1e-300;
  std::stringstream ss;
  write_csv(ss, {"u", "v"}, m);
  CHECK(ss.str().find("NA") != std::string::npos);
  const CsvTable back = read_csv(ss, true);
  CHECK(back.values(0, 0) == 0.1);
  CHECK(std::isnan(back.values(0, 1)));
  CHECK(back.values(1, 0) == -1.0 / 3.0);
  CHECK(back.values(1, 1) == 1e-300);
}

TEST_CASE("default MAR simulation leaves 469 of 625 responses missing") {
  SimConfig cfg;
  cfg.seed = 11;
  const Dataset d = simulate_dataset(cfg);
  CHECK(d.y.size() == 625);
  CHECK(d.pattern.n_u() == 469);
  CHECK(d.y.array().isNaN().count() == 469);
  CHECK(d.y_full);
  CHECK(d.mechanism == Mechanism::kMar);
  CHECK(!d.x_star);
}

TEST_CASE("default MNAR simulation") {
  SimConfig cfg;
  cfg.seed = 12;
  cfg.mechanism = MnarMechanism{};
  const Dataset d = simulate_dataset(cfg);
  REQUIRE(d.x_star);
  CHECK(d.x_star->cols() == 2);
  CHECK(d.truth_psi);
  const double frac = static_cast<double>(d.pattern.n_u()) / 625.0;
  MESSAGE("MNAR missing fraction " << frac);
  CHECK(frac > 0.3);
  CHECK(frac < 0.95);
}

TEST_CASE("dataset round trip and byte-identical resimulation") {
  const fs::path dir = scratch("roundtrip");
  SimConfig cfg;
  cfg.side = 6;
  cfg.r = 2;
  cfg.seed = 4;
  cfg.mechanism = MnarMechanism{};
  const Dataset d = simulate_dataset(cfg);
  write_dataset(dir / "a", d);
  write_dataset(dir / "b", simulate_dataset(cfg));
  for (const char* f : {"y.csv", "y_full.csv", "X.csv", "Xstar.csv", "W.txt", "pattern.csv",
                        "truth.json"}) {
    CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
  }
  DataPaths paths;
  paths.dir = dir / "a";
  const Dataset back = read_dataset(paths, std::nullopt);
  CHECK(back.mechanism == Mechanism::kMnar);
  CHECK(back.pattern.m() == d.pattern.m());
  CHECK(back.x == d.x);
  CHECK(*back.x_star == *d.x_star);
  CHECK(*back.y_full == *d.y_full);
  CHECK(Matrix(back.w.matrix()) == Matrix(d.w.matrix()));
  CHECK(back.fingerprint() == d.fingerprint());
  REQUIRE(back.truth);
  CHECK(back.truth->rho == d.truth->rho);

  // Missing Xstar under MNAR is an error.
  fs::remove(dir / "a" / "Xstar.csv");
  CHECK_THROWS(read_dataset(paths, std::nullopt));
}

TEST_CASE("run configuration parsing and validation") {
  Json j = {{"method", "hvb-3b"}, {"simulation", small_sim("MAR")}};
  RunConfig c = run_config_from_json(j);
  CHECK(c.method == Method::kHvb3B);
  CHECK_THROWS_AS(c.validate(RunConfig::Command::kFit), UsageError);

  j["method"] = "hvb-g";
  CHECK_NOTHROW(run_config_from_json(j).validate(RunConfig::Command::kFit));
  j["simulation"] = small_sim("MNAR");
  CHECK_THROWS_AS(run_config_from_json(j).validate(RunConfig::Command::kFit), UsageError);
  j["method"] = "hvb-allb";
  CHECK_NOTHROW(run_config_from_json(j).validate(RunConfig::Command::kFit));

  Json typo = j;
  typo["vb"] = {{"iteratons", 10}};
  CHECK_THROWS_AS(run_config_from_json(typo), UsageError);
  Json bad_method = j;
  bad_method["method"] = "vb";
  CHECK_THROWS_AS(run_config_from_json(bad_method), UsageError);

  // Round trip through JSON is stable.
  const RunConfig again = run_config_from_json(run_config_to_json(run_config_from_json(j)));
  CHECK(run_config_to_json(again) == run_config_to_json(run_config_from_json(j)));

  RunConfig none;
  CHECK_THROWS_AS(none.validate(RunConfig::Command::kFit), UsageError);
  CHECK_THROWS_AS(none.validate(RunConfig::Command::kSimulate), UsageError);
  CHECK_THROWS_AS(none.validate(RunConfig::Command::kCompare), UsageError);

  SamplerConfig s;
  CHECK(s.resolved_n1(Method::kHvbG) == 5);
  CHECK(s.resolved_n1(Method::kHvbAllB) == 10);
}

TEST_CASE("run_method end to end on a small dataset") {
  SimConfig sc = sim_config_from_json(small_sim("MNAR"));
  const Dataset data = simulate_dataset(sc);
  RunConfig cfg;
  cfg.method = Method::kHvb3B;
  cfg.vb.iterations = 300;
  cfg.vb.summary_draws = 200;
  cfg.sampler.n1 = 2;
  cfg.sampler.block_size = 2;
  const RunOutcome out = run_method(data, cfg, 5);
  CHECK(out.vb);
  CHECK(out.theta.size() == static_cast<std::size_t>(3 + 2 + 3));
  CHECK(out.missing_units == data.pattern.unobserved());
  CHECK(out.mse_missing);
  CHECK(out.tuning["k_prime"] == 3);
  const fs::path dir = scratch("run_method");
  write_run_artifacts(dir, out, data, cfg);
  const Json s = Json::parse(slurp(dir / "summary.json"));
  CHECK(s["method"] == "hvb-3b");
  CHECK(s["elbo_kind"] == "proxy");
  CHECK(slurp(dir / "elbo_trace.csv").rfind("iteration,value_proxy\n", 0) == 0);
  CHECK(read_csv(dir / "mean_trajectory.csv", false).values.rows() == 300);
}

TEST_CASE("command-line interface") {
  const fs::path dir = scratch("cli");
  const fs::path log = dir / "log.txt";

  SUBCASE("simulate is reproducible and honours --seed") {
    const auto cfg = write_config(dir, "sim.json", Json{{"simulation", small_sim("MAR")}});
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --out " + (dir / "s1").string(), log) == 0);
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --out " + (dir / "s2").string(), log) == 0);
    REQUIRE(run_cli("simulate --config " + cfg.string() + " --seed 99 --out " + (dir / "s3").string(),
                    log) == 0);
    CHECK(slurp(dir / "s1" / "y.csv") == slurp(dir / "s2" / "y.csv"));
    CHECK(slurp(dir / "s1" / "y.csv") != slurp(dir / "s3" / "y.csv"));
    CHECK(fs::exists(dir / "s1" / "manifest.json"));
    const Json m = Json::parse(slurp(dir / "s3" / "manifest.json"));
    CHECK(m["seed"] == 99);
  }

  SUBCASE("print-config and usage errors") {
    const auto cfg = write_config(dir, "fit.json",
                                  Json{{"method", "hvb-3b"}, {"simulation", small_sim("MAR")}});
    CHECK(run_cli("fit --config " + cfg.string() + " --print-config", log) == 0);
    CHECK(slurp(log).find("\"hvb-3b\"") != std::string::npos);
    CHECK(run_cli("fit --config " + cfg.string(), log) == 2);
    CHECK(run_cli("fit --config " + (dir / "absent.json").string(), log) == 3);
    CHECK(run_cli("fit", log) != 0);
    CHECK(run_cli("bogus --config x", log) != 0);
  }

  SUBCASE("fit, HMC chain shape and comparison") {
    const auto sim = write_config(dir, "sim.json", Json{{"simulation", small_sim("MAR")}});
    REQUIRE(run_cli("simulate --config " + sim.string() + " --out " + (dir / "data").string(), log) == 0);
    const Json data = {{"dir", (dir / "data").string()}};
    const auto jvb = write_config(
        dir, "jvb.json",
        Json{{"method", "jvb"}, {"data", data}, {"vb", {{"iterations", 300}, {"summary_draws", 200}}}});
    const auto nob = write_config(
        dir, "nob.json",
        Json{{"method", "hvb-nob"}, {"data", data}, {"vb", {{"iterations", 300}, {"summary_draws", 200}}}});
    const auto hmc = write_config(
        dir, "hmc.json",
        Json{{"method", "hmc"},
             {"data", data},
             {"hmc", {{"n_samples", 50}, {"burn_in", 20}, {"leapfrog_steps", 5}, {"pilot_iterations", 20},
                      {"adapt_mass", false}}}});
    REQUIRE(run_cli("fit --config " + jvb.string() + " --out " + (dir / "f_jvb").string(), log) == 0);
    REQUIRE(run_cli("fit --config " + nob.string() + " --out " + (dir / "f_nob").string(), log) == 0);
    REQUIRE(run_cli("fit --config " + hmc.string() + " --out " + (dir / "f_hmc").string(), log) == 0);

    for (const char* f : {"summary.json", "elbo_trace.csv", "mean_trajectory.csv",
                          "missing_posterior.csv", "manifest.json"}) {
      CHECK_MESSAGE(fs::exists(dir / "f_jvb" / f), f);
    }
    CHECK(slurp(dir / "f_jvb" / "elbo_trace.csv").rfind("iteration,value\n", 0) == 0);
    const Json sj = Json::parse(slurp(dir / "f_jvb" / "summary.json"));
    CHECK(sj["theta"].size() == 5u);
    CHECK(sj["elbo_kind"] == "elbo");

    const CsvTable chain = read_csv(dir / "f_hmc" / "chain.csv", false);
    CHECK(chain.values.rows() == 50);
    // theta (beta_0..beta_2, gamma, rho_logit) plus 6 missing responses
    CHECK(chain.values.cols() == 5 + 6);
    CHECK(chain.header.back().rfind("y_u_", 0) == 0);

    const auto cmp = write_config(
        dir, "cmp.json",
        Json{{"compare",
              {{"fits", {(dir / "f_jvb").string(), (dir / "f_nob").string(), (dir / "f_hmc").string()}},
               {"truth", (dir / "data").string()}}}});
    REQUIRE(run_cli("compare --config " + cmp.string() + " --out " + (dir / "cmp").string(), log) == 0);
    const std::string table = slurp(dir / "cmp" / "comparison.csv");
    CHECK(table.find("mse_missing") != std::string::npos);
    CHECK(table.find("jvb_mean") != std::string::npos);
    CHECK(table.find("hmc_mean") != std::string::npos);

    // A fit on different data cannot be compared.
    const auto other = write_config(
        dir, "other.json",
        Json{{"method", "hvb-nob"}, {"simulation", small_sim("MAR", 77)},
             {"vb", {{"iterations", 50}, {"summary_draws", 20}}}});
    REQUIRE(run_cli("fit --config " + other.string() + " --out " + (dir / "f_other").string(), log) == 0);
    const auto bad = write_config(
        dir, "bad_cmp.json",
        Json{{"compare", {{"fits", {(dir / "f_jvb").string(), (dir / "f_other").string()}}}}});
    CHECK(run_cli("compare --config " + bad.string() + " --out " + (dir / "cmp2").string(), log) == 2);
  }

  SUBCASE("replicates fan out over jobs") {
    Json j = {{"method", "hvb-nob"},
              {"simulation", small_sim("MAR")},
              {"replicates", 3},
              {"vb", {{"iterations", 50}, {"summary_draws", 20}}}};
    const auto cfg = write_config(dir, "reps.json", j);
    REQUIRE(run_cli("fit --config " + cfg.string() + " --jobs 2 --out " + (dir / "reps").string(), log) == 0);
    for (const char* r : {"rep_0000", "rep_0001", "rep_0002"}) {
      CHECK(fs::exists(dir / "reps" / r / "summary.json"));
      CHECK(fs::exists(dir / "reps" / r / "data" / "y.csv"));
    }
    CHECK(slurp(dir / "reps" / "rep_0000" / "data" / "y.csv") !=
          slurp(dir / "reps" / "rep_0001" / "data" / "y.csv"));
  }
}
