// fokker_cli <subcommand> --config <path> [--seed N] [--workers N] [--out <path>]
//
// Writes the result table as CSV (stdout, or <path>) and, with --out, the
// run metadata as JSON next to it (<path>.json). Failures print a one-line
// JSON record on stderr; exit status 0 success, 2 config, 3 numerical
// failure or tolerance breach, 4 non-convergence.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fokker/cli/config.hpp"
#include "fokker/cli/run.hpp"

namespace {

int fail(int code, const std::string& message) {
  nlohmann::json rec = {{"status", "error"},
                        {"kind", fokker::cli::failure_kind(code)},
                        {"exit_code", code},
                        {"message", message}};
  std::cerr << rec.dump() << "\n";
  return code;
}

bool write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  return static_cast<bool>(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-particle Fokker path-integral engine"};
  std::string subcommand, config_path, out_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  app.add_option("subcommand", subcommand, "validate | free-oracle | propagate | modified | sweep")
      ->required()
      ->check(CLI::IsMember(fokker::cli::subcommands()));
  app.add_option("--config", config_path, "flat JSON run configuration")->required();
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--workers", workers, "overrides the config worker count");
  app.add_option("--out", out_path, "CSV output path; metadata goes to <path>.json");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fokker::cli::kConfigError;
  }

  std::ifstream in(config_path, std::ios::binary);
  if (!in) return fail(fokker::cli::kConfigError, "config: cannot read " + config_path);
  std::stringstream text;
  text << in.rdbuf();

  fokker::cli::RunResult result;
  try {
    fokker::cli::RunConfig cfg = fokker::cli::parse_config(text.str());
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    fokker::cli::validate(cfg);
    result = fokker::cli::run(subcommand, cfg);
  } catch (const std::exception& e) {
    return fail(fokker::cli::exit_code_for(e), e.what());
  }

  result.meta["exit_code"] = result.exit_code;
  if (out_path.empty()) {
    std::cout << result.csv;
  } else if (!write_file(out_path, result.csv) ||
             !write_file(out_path + ".json", result.meta.dump(2) + "\n")) {
    return fail(fokker::cli::kNumericalFailure, "output: cannot write " + out_path);
  }
  if (result.exit_code != fokker::cli::kOk)
    return fail(result.exit_code, subcommand + ": a check exceeded its tolerance");
  return fokker::cli::kOk;
}
