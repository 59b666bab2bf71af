#pragma once

// Run orchestration: resolves a config into a manifest, per-epoch CSV
// telemetry, a final checkpoint, and a plain-inference audit of the
// final epoch's data.

#include <string>
#include <vector>

#include <excb/config.hpp>
#include <excb/metrics.hpp>

namespace excb {

struct RunPaths {
  std::string dir;
  std::string manifest;
  std::string telemetry;
  std::string checkpoint;
  std::string audit;
  std::string embeddings;

  static RunPaths in(const std::string& dir);
};

struct RunSummary {
  RunPaths paths;
  std::vector<EpochStats> telemetry;
  AuditResult audit;
};

// Trains per the config (optionally resuming from a checkpoint written
// by an identical config) and writes all run artifacts under
// cfg.out_dir.
RunSummary run_training(const ExperimentConfig& cfg, const std::string& resume_checkpoint = "");

// Re-audits a saved checkpoint against the config's data stream; with
// identical inputs this reproduces the run's audit file byte for byte.
AuditResult audit_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                             int64_t* step_out = nullptr);

void write_audit_json(const AuditResult& audit, int64_t step, std::ostream& os);

std::string telemetry_header();
std::string telemetry_row(const EpochStats& row);

}  // namespace excb
