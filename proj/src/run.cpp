#include <excb/run.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <excb/checkpoint.hpp>
#include <excb/trainer.hpp>

namespace excb {

namespace fs = std::filesystem;

RunPaths RunPaths::in(const std::string& dir) {
  RunPaths p;
  p.dir = dir;
  p.manifest = dir + "/manifest.json";
  p.telemetry = dir + "/telemetry.csv";
  p.checkpoint = dir + "/checkpoint.json";
  p.audit = dir + "/audit.json";
  p.embeddings = dir + "/embeddings.csv";
  return p;
}

std::string telemetry_header() {
  return "epoch,loss,confidence,agreement,purity,min_rel_size,max_rel_size,empty_frac";
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_manifest(const ExperimentConfig& cfg, const std::string& path) {
  nlohmann::json j;
  j["code_version"] = kCodeVersion;
  j["telemetry_schema"] = kTelemetrySchemaVersion;
  j["checkpoint_version"] = kCheckpointVersion;
  j["config"] = cfg.to_json();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("run: cannot write manifest " + path);
  os << j.dump(2) << "\n";
}

template <typename T>
void write_embeddings(const ExperimentConfig& cfg, const ModelPair<T>& model, int64_t first_step,
                      const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("run: cannot write embeddings " + path);
  const auto spec = cfg.mixture_spec();
  for (int64_t s = 0; s < cfg.steps_per_epoch(); ++s) {
    auto [points, labels] = sample_points<T>(spec, cfg.batch_size, first_step + s);
    auto emb = model.teacher_embeddings(points);
    for (int64_t i = 0; i < emb.rows(); ++i) {
      for (int64_t j = 0; j < emb.cols(); ++j)
        os << fmt(static_cast<double>(emb.at(i, j))) << ',';
      os << labels[static_cast<size_t>(i)] << "\n";
    }
  }
}

template <typename T>
RunSummary run_impl(const ExperimentConfig& cfg, const std::string& resume_checkpoint) {
  fs::create_directories(cfg.out_dir);
  RunSummary summary;
  summary.paths = RunPaths::in(cfg.out_dir);
  write_manifest(cfg, summary.paths.manifest);

  Trainer<T> trainer(cfg);
  bool resumed = false;
  if (!resume_checkpoint.empty()) {
    RelativeSizeVector sizes;
    int64_t step = 0;
    load_checkpoint(resume_checkpoint, trainer.model(), sizes, step);
    if (step % cfg.steps_per_epoch() != 0)
      throw std::runtime_error("run: checkpoint step is not an epoch boundary");
    if (step > cfg.total_steps()) throw std::runtime_error("run: checkpoint is past this run");
    trainer.sizes() = sizes;
    trainer.set_step(step);
    resumed = step > 0;
  }

  const bool append = resumed && fs::exists(summary.paths.telemetry);
  std::ofstream csv(summary.paths.telemetry, append ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("run: cannot write telemetry " + summary.paths.telemetry);
  if (!append) csv << telemetry_header() << "\n";

  const int64_t first_epoch = trainer.current_step() / cfg.steps_per_epoch();
  for (int64_t epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
    EpochStats row = trainer.run_epoch();
    summary.telemetry.push_back(row);
    csv << telemetry_row(row) << "\n";
    csv.flush();
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      char name[48];
      std::snprintf(name, sizeof name, "/checkpoint_epoch_%04lld.json",
                    static_cast<long long>(epoch + 1));
      save_checkpoint(cfg.out_dir + name, trainer.model(), trainer.sizes(),
                      trainer.current_step());
    }
  }

  save_checkpoint(summary.paths.checkpoint, trainer.model(), trainer.sizes(),
                  trainer.current_step());

  const int64_t audit_first = std::max<int64_t>(0, trainer.current_step() - cfg.steps_per_epoch());
  summary.audit = posttrain_audit(trainer.model(), cfg.mixture_spec(), cfg.batch_size, audit_first,
                                  cfg.steps_per_epoch());
  {
    std::ofstream os(summary.paths.audit);
    if (!os) throw std::runtime_error("run: cannot write audit " + summary.paths.audit);
    write_audit_json(summary.audit, trainer.current_step(), os);
  }

  if (cfg.export_embeddings)
    write_embeddings(cfg, trainer.model(), audit_first, summary.paths.embeddings);
  return summary;
}

template <typename T>
AuditResult audit_impl(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                       int64_t* step_out) {
  ModelPair<T> model(cfg.model_config());
  RelativeSizeVector sizes;
  int64_t step = 0;
  load_checkpoint(checkpoint_path, model, sizes, step);
  if (step_out) *step_out = step;
  const int64_t first = std::max<int64_t>(0, step - cfg.steps_per_epoch());
  return posttrain_audit(model, cfg.mixture_spec(), cfg.batch_size, first, cfg.steps_per_epoch());
}

}  // namespace

std::string telemetry_row(const EpochStats& r) {
  std::string out = std::to_string(r.epoch);
  for (double v : {r.loss, r.confidence, r.agreement, r.purity, r.min_rel_size, r.max_rel_size,
                   r.empty_frac})
    out += "," + fmt(v);
  return out;
}

void write_audit_json(const AuditResult& audit, int64_t step, std::ostream& os) {
  nlohmann::json j;
  j["schema"] = 1;
  j["step"] = step;
  j["clusters"] = audit.clusters;
  j["points"] = audit.points;
  j["min_rel"] = audit.stats.min_rel;
  j["max_rel"] = audit.stats.max_rel;
  j["empty_frac"] = audit.stats.empty_frac;
  j["counts"] = audit.counts;
  j["sorted_relative_sizes"] = audit.sorted_relative_sizes;
  os << j.dump(2) << "\n";
}

RunSummary run_training(const ExperimentConfig& cfg, const std::string& resume_checkpoint) {
  cfg.validate();
  return cfg.precision == Precision::f64 ? run_impl<double>(cfg, resume_checkpoint)
                                         : run_impl<float>(cfg, resume_checkpoint);
}

AuditResult audit_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                             int64_t* step_out) {
  cfg.validate();
  return cfg.precision == Precision::f64 ? audit_impl<double>(cfg, checkpoint_path, step_out)
                                         : audit_impl<float>(cfg, checkpoint_path, step_out);
}

}  // namespace excb
