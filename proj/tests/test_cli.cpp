#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "heckmi/dataset.hpp"
#include "heckmi/sim.hpp"

namespace fs = std::filesystem;
using namespace heckmi;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("heckmi_cli_" + tag + "_" + std::to_string(std::rand()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(HECKMI_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

const char* kImputeConfig = R"({
  "seed": 5, "m": 3,
  "specs": [{"name": "y", "target": "y", "outcome_predictors": ["X1", "X2"], "selection_predictors": ["X1", "X2", "X3"]}]
})";

fs::path make_data(const fs::path& dir, int n_i = 150) {
  ScenarioConfig c;
  c.cluster_size = n_i;
  RngStream rng(3);
  const GeneratedData g = generate(c, rng);
  const fs::path p = dir / "data.csv";
  g.data.write_csv(p.string());
  return p;
}

}  // namespace

TEST_CASE("impute writes m datasets and a report") {
  TempDir tmp("impute");
  const fs::path data = make_data(tmp.path);
  write(tmp.path / "cfg.json", kImputeConfig);
  const std::string base = "impute " + data.string() + " --config " + (tmp.path / "cfg.json").string();
  REQUIRE(run(base + " --out " + (tmp.path / "a").string()) == 0);
  for (int k = 1; k <= 3; ++k) CHECK(fs::exists(tmp.path / "a" / ("imp_" + std::to_string(k) + ".csv")));
  const std::string report = slurp(tmp.path / "a" / "imputation_report.json");
  CHECK(report.find("\"seed\"") != std::string::npos);
  CHECK(report.find("fallback") != std::string::npos);
  CHECK(report.find("rho_hat") != std::string::npos);

  REQUIRE(run(base + " --out " + (tmp.path / "b").string()) == 0);
  for (int k = 1; k <= 3; ++k) {
    const std::string name = "imp_" + std::to_string(k) + ".csv";
    CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
  }
  REQUIRE(run(base + " --seed 6 --m 2 --out " + (tmp.path / "c").string()) == 0);
  CHECK(fs::exists(tmp.path / "c" / "imp_2.csv"));
  CHECK_FALSE(fs::exists(tmp.path / "c" / "imp_3.csv"));
  CHECK(slurp(tmp.path / "a" / "imp_1.csv") != slurp(tmp.path / "c" / "imp_1.csv"));

  CHECK(run(base + " --dry-run --out " + (tmp.path / "d").string()) == 0);
  CHECK_FALSE(fs::exists(tmp.path / "d" / "imp_1.csv"));
}

TEST_CASE("exit codes separate validation and computation failures") {
  TempDir tmp("codes");
  const fs::path data = make_data(tmp.path, 40);
  write(tmp.path / "noerv.json",
        R"({"specs": [{"target": "y", "outcome_predictors": ["X1", "X2"], "selection_predictors": ["X1", "X2"]}]})");
  CHECK(run("impute " + data.string() + " --config " + (tmp.path / "noerv.json").string()) == 2);
  write(tmp.path / "missingcol.json",
        R"({"specs": [{"target": "y", "outcome_predictors": ["X1", "Q"], "selection_predictors": ["X1", "X3"]}]})");
  CHECK(run("impute " + data.string() + " --config " + (tmp.path / "missingcol.json").string() + " --out " +
            tmp.path.string()) == 2);
  CHECK(run("impute " + (tmp.path / "absent.csv").string() + " --config " + (tmp.path / "noerv.json").string()) == 2);
  CHECK(run("frobnicate") == 2);

  // Only one cluster carries observed data: stage-2 pooling cannot run.
  write(tmp.path / "one.csv", [] {
    std::ostringstream os;
    os << "cluster,X1,X2,X3,y\n";
    RngStream rng(1);
    for (int c = 1; c <= 3; ++c)
      for (int i = 0; i < 60; ++i) {
        const double x1 = rng.normal(), x2 = rng.normal(), x3 = rng.normal();
        os << c << "," << x1 << "," << x2 << "," << x3 << ",";
        if (c == 1 && x3 > -0.5) os << 1 + x1 + x2 + rng.normal();
        else os << "NA";
        os << "\n";
      }
    return os.str();
  }());
  write(tmp.path / "ok.json", kImputeConfig);
  CHECK(run("impute " + (tmp.path / "one.csv").string() + " --config " + (tmp.path / "ok.json").string() +
            " --out " + tmp.path.string()) == 3);
}

TEST_CASE("simulate writes every method and estimand") {
  TempDir tmp("simulate");
  write(tmp.path / "sim.json",
        R"({"seed": 9, "m": 2, "scenarios": [{"name": "s", "rho": [0.0, 0.6], "cluster_size": 100, "n_reps": 2, "m": 2}]})");
  REQUIRE(run("simulate --config " + (tmp.path / "sim.json").string() + " --emit-plot-data --out " +
              tmp.path.string()) == 0);
  const std::string csv = slurp(tmp.path / "metrics.csv");
  CHECK(csv.rfind("scenario,method,estimand,measure,value,mcse\n", 0) == 0);
  for (const char* scen : {"s_rho0,", "s_rho0.6,"})
    for (const char* method : {"cca", "heckman_1l", "mar_2l", "heckman_2l"})
      for (const char* est : {"beta0", "beta1", "beta2", "sd_psi00", "sd_psi11", "sd_psi22"}) {
        const std::string key = std::string(scen) + method + "," + est + ",bias,";
        INFO(key);
        CHECK(csv.find(key) != std::string::npos);
      }
  CHECK(fs::exists(tmp.path / "metrics.json"));
  CHECK(fs::exists(tmp.path / "plot_rho_continuous.csv"));
  CHECK(run("simulate --config " + (tmp.path / "sim.json").string() + " --dry-run") == 0);
  write(tmp.path / "bad.json", R"({"scenarios": [{"rho": 2}]})");
  CHECK(run("simulate --config " + (tmp.path / "bad.json").string()) == 2);
}

TEST_CASE("evaluate scores imputations against the truth") {
  TempDir tmp("evaluate");
  const fs::path truth = tmp.path / "truth.csv";
  write(truth, "id,a,b\n1,1.0,2.0\n2,2.0,3.0\n3,3.0,5.0\n");
  fs::create_directories(tmp.path / "same");
  for (int k = 1; k <= 2; ++k) write(tmp.path / "same" / ("imp_" + std::to_string(k) + ".csv"), slurp(truth));
  REQUIRE(run("evaluate " + truth.string() + " " + (tmp.path / "same").string() + " --out " +
              (tmp.path / "o1").string()) == 0);
  const std::string m1 = slurp(tmp.path / "o1" / "metrics.csv");
  CHECK(m1.find("evaluate,imputed,a,bias,0,") != std::string::npos);
  CHECK(m1.find("evaluate,imputed,b,rmse,0,") != std::string::npos);

  // Column order does not matter.
  fs::create_directories(tmp.path / "shuffled");
  for (int k = 1; k <= 2; ++k)
    write(tmp.path / "shuffled" / ("imp_" + std::to_string(k) + ".csv"), "b,id,a\n2.0,1,2.0\n3.0,2,2.0\n5.0,3,3.0\n");
  REQUIRE(run("evaluate " + truth.string() + " " + (tmp.path / "shuffled").string() + " --out " +
              (tmp.path / "o2").string()) == 0);
  const std::string m2 = slurp(tmp.path / "o2" / "metrics.csv");
  CHECK(m2.find("evaluate,imputed,a,bias,0.3333333333333333,") != std::string::npos);
  CHECK(m2.find("evaluate,imputed,b,bias,0,") != std::string::npos);

  write(tmp.path / "incomplete.csv", "id,a,b\n1,NA,2.0\n2,2.0,3.0\n3,3.0,5.0\n");
  REQUIRE(run("evaluate " + truth.string() + " " + (tmp.path / "shuffled").string() + " --incomplete " +
              (tmp.path / "incomplete.csv").string() + " --out " + (tmp.path / "o3").string()) == 0);
  const std::string m3 = slurp(tmp.path / "o3" / "metrics.csv");
  CHECK(m3.find("evaluate,imputed,a,bias,1,") != std::string::npos);

  fs::remove(tmp.path / "same" / "imp_1.csv");
  write(tmp.path / "same" / "imp_3.csv", slurp(truth));
  CHECK(run("evaluate " + truth.string() + " " + (tmp.path / "same").string() + " --out " +
            (tmp.path / "o4").string()) == 2);
}
