#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fokker/cli/config.hpp"
#include "fokker/cli/run.hpp"

using namespace fokker;
using namespace fokker::cli;

namespace {

const char* kMinimal = R"({"mode": "euclidean", "m1": 1, "m2": 1, "coupling": 0, "hbar": 1, "delta_width": 0.1})";

nlohmann::json minimal() { return nlohmann::json::parse(kMinimal); }

std::string error_of(const nlohmann::json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(FOKKER_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::filesystem::path kConfigs = std::filesystem::path(FOKKER_SOURCE_DIR) / "configs";

}  // namespace

TEST(ParseConfig, MinimalFreeConfig) {
  const RunConfig c = parse_config(std::string(kMinimal));
  EXPECT_EQ(c.params.mode, Mode::Euclidean);
  EXPECT_EQ(c.params.m1, 1.0);
  EXPECT_EQ(c.params.coupling, 0.0);
  EXPECT_EQ(c.params.delta_width, 0.1);
  EXPECT_EQ(c.n1, 4u);
}

TEST(ParseConfig, OptionalKeys) {
  auto doc = minimal();
  doc["n1"] = 6;
  doc["x2_out"] = {2.0, 0.5, 0.0, 0.0};
  doc["seed"] = 99;
  doc["segment_points"] = 4;
  const RunConfig c = parse_config(doc);
  EXPECT_EQ(c.n1, 6u);
  EXPECT_EQ(c.p2.x_out, (Vec4{2.0, 0.5, 0.0, 0.0}));
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.params.segment_points, 4);
}

TEST(ParseConfig, UnknownKeyIsNamed) {
  auto doc = minimal();
  doc.erase("coupling");
  doc["couplng"] = 0.1;
  EXPECT_NE(error_of(doc).find("couplng"), std::string::npos);
}

TEST(ParseConfig, MissingRequiredKey) {
  auto doc = minimal();
  doc.erase("hbar");
  EXPECT_NE(error_of(doc).find("hbar"), std::string::npos);
}

TEST(ParseConfig, TypeMismatch) {
  auto doc = minimal();
  doc["n1"] = "four";
  EXPECT_NE(error_of(doc).find("n1"), std::string::npos);
  doc = minimal();
  doc["x1_in"] = {1.0, 2.0};
  EXPECT_NE(error_of(doc).find("x1_in"), std::string::npos);
}

TEST(ParseConfig, NegativeWidthViolatesInvariant) {
  auto doc = minimal();
  doc["delta_width"] = -0.1;
  const std::string err = error_of(doc);
  EXPECT_NE(err.find("delta_width"), std::string::npos);
  EXPECT_EQ(err.find('\n'), std::string::npos);
}

TEST(ParseConfig, MalformedText) { EXPECT_THROW(parse_config(std::string("{\"mode\": ")), ConfigError); }

TEST(Run, PropagateAtZeroCouplingIsFreeProduct) {
  const RunConfig c = parse_config(std::string(kMinimal));
  const auto out = run("propagate", c);
  const auto rows = parse_csv(out.csv);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"S1", "S2", "ratio_mean", "ratio_stderr", "free_reference", "value",
                                               "n_samples", "skipped"}));
  const double product = free_kernel_analytic(c.p1.x_in, c.p1.x_out, c.S1, 1.0, 1.0) *
                         free_kernel_analytic(c.p2.x_in, c.p2.x_out, c.S2, 1.0, 1.0);
  EXPECT_EQ(std::stod(rows[1][5]), product);
  EXPECT_EQ(rows[1][4], rows[1][5]);
  EXPECT_EQ(out.exit_code, kOk);
  EXPECT_EQ(out.meta["seed"], c.seed);
}

TEST(Run, SweepCouplingIsMonotone) {
  const RunConfig c = parse_config(slurp(kConfigs / "sweep.json"));
  const auto rows = parse_csv(run("sweep", c).csv);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0][0], "coupling");
  EXPECT_EQ(rows[0][3], "ratio_mean");
  std::vector<double> ratio;
  for (std::size_t r = 1; r < rows.size(); ++r) ratio.push_back(std::stod(rows[r][3]));
  EXPECT_EQ(ratio[0], 1.0);
  const bool down = ratio[1] < ratio[0] && ratio[2] < ratio[1];
  const bool up = ratio[1] > ratio[0] && ratio[2] > ratio[1];
  EXPECT_TRUE(down || up) << ratio[0] << " " << ratio[1] << " " << ratio[2];
}

TEST(Run, DeterministicCsv) {
  RunConfig c = parse_config(slurp(kConfigs / "propagate.json"));
  c.n_samples = 500;
  for (std::size_t workers : {1u, 2u}) {
    c.workers = workers;
    EXPECT_EQ(run("propagate", c).csv, run("propagate", c).csv);
  }
}

TEST(Run, ValidatePasses) {
  const auto out = run("validate", parse_config(slurp(kConfigs / "validate.json")));
  EXPECT_EQ(out.exit_code, kOk) << out.csv;
  const auto rows = parse_csv(out.csv);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"check", "residual", "tolerance", "passed"}));
  EXPECT_GE(rows.size(), 7u);
  for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_EQ(rows[r][3], "1") << rows[r][0];
}

TEST(Run, ModifiedReportsClassicalSolution) {
  RunConfig c = parse_config(slurp(kConfigs / "modified.json"));
  c.n_samples = 50;
  const auto out = run("modified", c);
  EXPECT_LT(out.meta["classical"]["on_shell_residual"].get<double>(), 1e-8);
  EXPECT_EQ(parse_csv(out.csv)[0][0], "S1_free");
}

TEST(Run, ExitCodeMapping) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), kConfigError);
  EXPECT_EQ(exit_code_for(DomainError("x")), kConfigError);
  EXPECT_EQ(exit_code_for(NonConvergence("x", 1.0)), kNonConvergence);
  EXPECT_EQ(exit_code_for(SingularOperator("x")), kNumericalFailure);
  EXPECT_THROW(run("frobnicate", parse_config(std::string(kMinimal))), ConfigError);
}

TEST(Binary, ExitStatusAndOutputs) {
  const auto dir = std::filesystem::temp_directory_path() / "fokker_cli_test";
  std::filesystem::create_directories(dir);
  const auto free_cfg = (kConfigs / "free.json").string();
  EXPECT_EQ(run_binary("propagate --config " + free_cfg + " --out " + (dir / "a.csv").string()), 0);
  EXPECT_EQ(run_binary("propagate --config " + free_cfg + " --out " + (dir / "b.csv").string()), 0);
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  const auto meta = nlohmann::json::parse(slurp(dir / "a.csv.json"));
  EXPECT_EQ(meta["subcommand"], "propagate");
  EXPECT_TRUE(meta.contains("config_hash"));

  std::ofstream(dir / "bad.json") << R"({"mode": "euclidean", "m1": 1, "m2": 1, "couplng": 0, "hbar": 1, "delta_width": 0.1})";
  EXPECT_EQ(run_binary("propagate --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run_binary("propagate --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_binary("validate --config " + (kConfigs / "validate.json").string()), 0);
  EXPECT_NE(run_binary("nonsense --config " + free_cfg), 0);
}
