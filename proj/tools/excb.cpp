// Experiment CLI: train / audit / sweep / validate-config / export-data.
// Exit codes: 0 success, 2 usage or config error, 1 runtime failure.
// Failures print a one-line JSON error object to stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <excb/config.hpp>
#include <excb/run.hpp>
#include <excb/synthdata.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

namespace {

namespace fs = std::filesystem;

int fail(int code, const std::string& kind, const std::string& detail) {
  nlohmann::json j{{"error", kind}, {"detail", detail}};
  std::cerr << j.dump() << "\n";
  return code;
}

excb::ExperimentConfig resolved_config(const std::string& path,
                                       const std::vector<std::string>& overrides) {
  auto cfg = excb::load_config(path);
  for (const auto& ov : overrides) excb::apply_override(cfg, ov);
  return cfg;
}

// grid file: same dialect as configs, but values are comma-separated
// candidate lists; runs the cartesian product sequentially
std::vector<std::pair<std::string, std::vector<std::string>>> parse_grid(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("grid: cannot open " + path);
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r\n");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t\r\n");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("grid: expected key = v1, v2, ...");
    std::vector<std::string> values;
    std::stringstream ss(line.substr(eq + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) values.push_back(trim(tok));
    if (values.empty()) throw std::invalid_argument("grid: empty value list");
    out.emplace_back(trim(line.substr(0, eq)), values);
  }
  if (out.empty()) throw std::invalid_argument("grid: no entries");
  return out;
}

int run_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& resume) {
  auto cfg = resolved_config(config_path, overrides);
  auto summary = excb::run_training(cfg, resume);
  nlohmann::json j{{"out_dir", summary.paths.dir},
                   {"epochs", cfg.epochs},
                   {"final_loss", summary.telemetry.empty() ? 0.0 : summary.telemetry.back().loss},
                   {"audit_empty_frac", summary.audit.stats.empty_frac}};
  std::cout << j.dump() << "\n";
  return 0;
}

int run_audit(const std::string& checkpoint, const std::string& data_config,
              const std::vector<std::string>& overrides, const std::string& out) {
  auto cfg = resolved_config(data_config, overrides);
  int64_t step = 0;
  auto audit = excb::audit_checkpoint(cfg, checkpoint, &step);
  if (out.empty()) {
    excb::write_audit_json(audit, step, std::cout);
  } else {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("audit: cannot write " + out);
    excb::write_audit_json(audit, step, os);
  }
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& grid_path,
              const std::vector<std::string>& overrides) {
  const auto grid = parse_grid(grid_path);
  std::vector<size_t> idx(grid.size(), 0);
  const auto base = resolved_config(config_path, overrides);

  std::ofstream index(base.out_dir.empty() ? "sweep_index.csv" : base.out_dir + "/sweep_index.csv");
  fs::create_directories(base.out_dir);
  index << "run,overrides\n";

  int run_id = 0;
  while (true) {
    auto cfg = base;
    std::string desc;
    for (size_t g = 0; g < grid.size(); ++g) {
      const std::string assignment = grid[g].first + "=" + grid[g].second[idx[g]];
      excb::apply_override(cfg, assignment);
      desc += (g ? " " : "") + assignment;
    }
    char sub[32];
    std::snprintf(sub, sizeof sub, "run_%03d", run_id);
    cfg.out_dir = base.out_dir + "/" + sub;
    excb::run_training(cfg);
    index << sub << ",\"" << desc << "\"\n";
    index.flush();
    ++run_id;

    size_t g = 0;
    while (g < grid.size() && ++idx[g] == grid[g].second.size()) {
      idx[g] = 0;
      ++g;
    }
    if (g == grid.size()) break;
  }
  std::cout << nlohmann::json{{"runs", run_id}, {"out_dir", base.out_dir}}.dump() << "\n";
  return 0;
}

int run_export(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& out, int64_t epoch) {
  auto cfg = resolved_config(config_path, overrides);
  if (epoch < 0 || epoch >= cfg.epochs) throw std::invalid_argument("export: epoch out of range");
  std::ofstream os(out);
  if (!os) throw std::runtime_error("export: cannot write " + out);
  excb::export_points_csv(cfg.mixture_spec(), cfg.batch_size, epoch * cfg.steps_per_epoch(),
                          cfg.steps_per_epoch(), os);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online cluster-balanced self-supervised training on synthetic streams"};
  app.require_subcommand(1);

  std::string config_path, resume, checkpoint, data_config, out, grid_path;
  std::vector<std::string> overrides;
  int64_t epoch = 0;

  auto* train = app.add_subcommand("train", "Run a training experiment");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--override", overrides, "key=value config overrides");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* audit = app.add_subcommand("audit", "Audit a checkpoint's cluster distribution");
  audit->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  audit->add_option("--data", data_config, "config file describing the data stream")->required();
  audit->add_option("--override", overrides, "key=value config overrides");
  audit->add_option("--out", out, "write the audit JSON here instead of stdout");

  auto* sweep = app.add_subcommand("sweep", "Sequential grid of training runs");
  sweep->add_option("--config", config_path, "base config file")->required();
  sweep->add_option("--grid", grid_path, "grid file: key = v1, v2, ...")->required();
  sweep->add_option("--override", overrides, "key=value config overrides");

  auto* validate = app.add_subcommand("validate-config", "Parse and validate a config");
  validate->add_option("--config", config_path, "config file")->required();
  validate->add_option("--override", overrides, "key=value config overrides");

  auto* exporter = app.add_subcommand("export-data", "Export one epoch of base points as CSV");
  exporter->add_option("--config", config_path, "config file")->required();
  exporter->add_option("--override", overrides, "key=value config overrides");
  exporter->add_option("--out", out, "output CSV path")->required();
  exporter->add_option("--epoch", epoch, "epoch index to export (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return fail(2, "usage", e.what());
  }

  try {
    if (*train) return run_train(config_path, overrides, resume);
    if (*audit) return run_audit(checkpoint, data_config, overrides, out);
    if (*sweep) return run_sweep(config_path, grid_path, overrides);
    if (*validate) {
      resolved_config(config_path, overrides);
      std::cout << nlohmann::json{{"valid", true}, {"config", config_path}}.dump() << "\n";
      return 0;
    }
    if (*exporter) return run_export(config_path, overrides, out, epoch);
  } catch (const std::invalid_argument& e) {
    return fail(2, "config", e.what());
  } catch (const std::exception& e) {
    return fail(1, "runtime", e.what());
  }
  return fail(2, "usage", "no subcommand");
}
