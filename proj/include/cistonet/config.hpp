#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cistonet/csv.hpp"
#include "cistonet/datagen.hpp"
#include "cistonet/prior.hpp"
#include "cistonet/trainer.hpp"

namespace cistonet {

// Flat key/value configuration with [sections]; '#' and ';' start comments.
using IniData = std::map<std::string, std::map<std::string, std::string>>;
IniData parse_ini(const std::string& text);

struct DataPaths {
  std::string train_csv, val_csv, test_csv;
  CsvSchema schema;
};

struct ExperimentConfig {
  // [run]
  int replications = 1;
  std::uint64_t master_seed = 0;

  // exactly one of [dgp] / [data]
  std::optional<DgpSpec> dgp;
  std::optional<DataPaths> data;

  // [model] — d_a/d_y/d_x of 0 are inferred from the dataset at run time
  StoNetConfig model;

  // [schedule]
  TrainSchedule schedule;

  // [prior]
  PriorHyper prior = PriorHyper::from_variances(1e-6, 1e-4, 1e-1);
  double prior_c = 1.1;
  double prior_delta_n = 0.1;

  // [estimate]
  int est_M = 100;
  double est_delta = -1.0;  // <=0: 0.05 * observed treatment range
  std::vector<double> est_grid;
  std::string sigma_mode = "hat";  // hat | model | fixed
  double sigma_fixed = 0.0;

  // [diagnostics]
  double diag_alpha = 0.1;
  int diag_B = 20;
  int diag_burn_in = 200;
  int diag_thin = 10;
  double diag_eps = -1.0, diag_eta = -1.0;

  // [bootstrap]
  int boot_B = 100;
  double boot_level = 0.95;
  int boot_short_epochs = 20;
  int boot_M = 100;

  std::string config_hash;  // FNV-1a of the source text, hex
};

ExperimentConfig config_from_ini(const IniData& ini, const std::string& source_text);
ExperimentConfig load_config_file(const std::string& path);

}  // namespace cistonet
