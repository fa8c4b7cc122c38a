#pragma once

#include <optional>
#include <string>

#include "cistonet/checkpoint.hpp"
#include "cistonet/config.hpp"
#include "cistonet/diagnostics.hpp"
#include "cistonet/estimator.hpp"

namespace cistonet {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct SplitData {
  Dataset train, val, test;
  std::optional<DgpManifest> manifest;
};

// Generates from [dgp] (with the given seed when nonzero) or loads [data].
SplitData acquire_data(const ExperimentConfig& cfg, std::uint64_t dgp_seed);

Dataset concat_rows(const Dataset& a, const Dataset& b);

struct TrainOutput {
  Checkpoint ckpt;
  TrainLog log;
};

TrainOutput train_on(const ExperimentConfig& cfg, const Dataset& train,
                     std::uint64_t model_seed, std::uint64_t schedule_seed);

// sigma_z^2 the estimator should draw with, per [estimate] sigma_mode.
double resolve_sigma_z2(const ExperimentConfig& cfg, const Checkpoint& ckpt);

// Rates in effect at the end of the configured schedule (finetune scale
// applied); what the warm-start bootstrap trains with.
struct FinalRates {
  double eps = 0;
  std::vector<double> gammas;
};
FinalRates final_stage_rates(const ExperimentConfig& cfg, int n_rows);

// Per-replication benchmark summary, kind-dependent fields left at NaN when
// not applicable.
struct ReplicationMetrics {
  int replication = 0;
  double ate_hat_in = std::nan(""), ate_hat_out = std::nan("");
  double ate_true = std::nan("");
  double pehe_in = std::nan(""), pehe_out = std::nan("");
  double marginal_within_half_sd = std::nan("");  // fraction over treatments
};

struct BenchmarkOutput {
  std::vector<ReplicationMetrics> reps;
  // aggregate rows written to benchmark.csv
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> table_header;
};

BenchmarkOutput run_benchmark(const ExperimentConfig& cfg, const std::string& out_dir,
                              int threads);

// Subcommand entry points; write their artifacts under out_dir.
void run_generate(const ExperimentConfig& cfg, const std::string& out_dir,
                  std::uint64_t master);
void run_train(const ExperimentConfig& cfg, const std::string& out_dir,
               std::uint64_t master);
void run_estimate(const ExperimentConfig& cfg, const std::string& out_dir,
                  std::uint64_t master);
void run_diagnose(const ExperimentConfig& cfg, const std::string& out_dir,
                  std::uint64_t master);
void run_bootstrap(const ExperimentConfig& cfg, const std::string& out_dir,
                   std::uint64_t master);

std::string manifest_line(const ExperimentConfig& cfg, std::uint64_t master);

}  // namespace cistonet
