#include "cistonet/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>

#include "cistonet/util.hpp"

namespace cistonet {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// seed-derivation tags
constexpr std::uint64_t kTagDgp = 0xD6, kTagModel = 0x30, kTagSchedule = 0x5C,
                        kTagEstimate = 0xE5, kTagDiag = 0xD1, kTagBoot = 0xB5;

std::string path_join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output dir " + dir + ": " + ec.message());
}

json manifest_to_json(const DgpManifest& m) {
  json j{{"kind", to_string(m.kind)},
         {"seed", m.seed},
         {"n_train", m.n_train},
         {"n_val", m.n_val},
         {"n_test", m.n_test},
         {"misspec_gamma", m.misspec_gamma},
         {"centering_constant", m.centering_constant},
         {"artifact_version", kArtifactVersion}};
  if (m.beta.size())
    j["beta"] = std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size());
  if (m.theta.size()) {
    j["theta"] = std::vector<double>(m.theta.data(), m.theta.data() + m.theta.size());
    j["theta0"] = m.theta0;
  }
  return j;
}

bool is_binary_kind(DgpKind k) {
  return k == DgpKind::ProxySim || k == DgpKind::MisspecBasicProxy ||
         k == DgpKind::MisspecOutcomeProxy || k == DgpKind::MisspecTreatmentProxy;
}

}  // namespace

std::string manifest_line(const ExperimentConfig& cfg, std::uint64_t master) {
  return "artifact_version=" + std::string(kArtifactVersion) +
         ",config_hash=" + cfg.config_hash + ",seed=" + std::to_string(master);
}

SplitData acquire_data(const ExperimentConfig& cfg, std::uint64_t dgp_seed) {
  SplitData out;
  if (cfg.dgp) {
    DgpSpec spec = *cfg.dgp;
    if (spec.seed == 0) spec.seed = dgp_seed;
    GeneratedData g = generate(spec);
    out.train = std::move(g.train);
    out.val = std::move(g.val);
    out.test = std::move(g.test);
    out.manifest = std::move(g.manifest);
    return out;
  }
  if (!cfg.data) throw ConfigError("config: need a [dgp] or [data] section");
  out.train = load_dataset_csv(cfg.data->train_csv, cfg.data->schema);
  if (!cfg.data->val_csv.empty())
    out.val = load_dataset_csv(cfg.data->val_csv, cfg.data->schema);
  if (!cfg.data->test_csv.empty())
    out.test = load_dataset_csv(cfg.data->test_csv, cfg.data->schema);
  return out;
}

Dataset concat_rows(const Dataset& a, const Dataset& b) {
  if (b.n() == 0) return a;
  if (a.n() == 0) return b;
  if (a.d_a() != b.d_a() || a.d_y() != b.d_y() || a.d_x() != b.d_x())
    throw DimensionError("concat_rows: column mismatch");
  Dataset out;
  out.a.resize(a.n() + b.n(), a.d_a());
  out.a << a.a, b.a;
  out.y.resize(a.n() + b.n(), a.d_y());
  out.y << a.y, b.y;
  if (a.x) {
    out.x = Matrix(a.n() + b.n(), a.d_x());
    *out.x << *a.x, *b.x;
  }
  if (a.truth && b.truth) {
    DatasetTruth t;
    t.ate = a.truth->ate;
    t.theta = a.truth->theta;
    t.theta0 = a.truth->theta0;
    t.beta = a.truth->beta;
    t.dgp_kind = a.truth->dgp_kind;
    if (a.truth->cate.size() && b.truth->cate.size()) {
      t.cate.resize(a.truth->cate.size() + b.truth->cate.size());
      t.cate << a.truth->cate, b.truth->cate;
    }
    if (a.truth->z.size() && b.truth->z.size()) {
      t.z.resize(a.truth->z.rows() + b.truth->z.rows(), a.truth->z.cols());
      t.z << a.truth->z, b.truth->z;
    }
    out.truth = std::move(t);
  }
  return out;
}

namespace {

StoNetConfig resolve_model_config(const ExperimentConfig& cfg, const Dataset& data,
                                  std::uint64_t model_seed) {
  StoNetConfig mc = cfg.model;
  if (mc.d_a <= 0) mc.d_a = data.d_a();
  if (mc.d_y <= 0) mc.d_y = data.d_y();
  if (mc.d_x <= 0) mc.d_x = data.d_x();
  mc.seed = model_seed;
  return mc;
}

}  // namespace

TrainOutput train_on(const ExperimentConfig& cfg, const Dataset& train_data,
                     std::uint64_t model_seed, std::uint64_t schedule_seed) {
  StoNetModel model = build_model(resolve_model_config(cfg, train_data, model_seed));

  // advisory prior-window check only; training proceeds regardless
  validate_hyper(train_data.n(), model.param_count(), cfg.prior, cfg.prior_delta_n,
                 cfg.prior_c);

  TrainSchedule sched = cfg.schedule;
  if (static_cast<int>(sched.gamma0.size()) != model.n_modules())
    throw ConfigError("schedule: gamma0 needs " + std::to_string(model.n_modules()) +
                      " entries for this variant");
  sched.seed = schedule_seed;

  TrainResult r = train(std::move(model), train_data, sched, cfg.prior);
  TrainOutput out;
  out.log = std::move(r.log);
  out.ckpt.model = std::move(r.model);
  out.ckpt.sigma_z2_hat = update_sigma_z(
      r.state.z, latent_conditional_mean(out.ckpt.model, train_data), 1.0, 1.0);
  return out;
}

double resolve_sigma_z2(const ExperimentConfig& cfg, const Checkpoint& ckpt) {
  if (cfg.sigma_mode == "model") return ckpt.model.sigma_z2;
  if (cfg.sigma_mode == "fixed") return cfg.sigma_fixed;
  return ckpt.sigma_z2_hat >= 0.0 ? ckpt.sigma_z2_hat : ckpt.model.sigma_z2;
}

FinalRates final_stage_rates(const ExperimentConfig& cfg, int n_rows) {
  const TrainSchedule& s = cfg.schedule;
  const int iters_per_epoch =
      (s.minibatch <= 0 || s.minibatch >= n_rows)
          ? 1
          : (n_rows + s.minibatch - 1) / s.minibatch;
  const long k_end =
      static_cast<long>(s.train_epochs + s.finetune_epochs) * iters_per_epoch;
  FinalRates r;
  r.eps = lr_at(k_end, s.eps0, s.eps_decay) * s.finetune_scale;
  for (double g : s.gamma0)
    r.gammas.push_back(lr_at(k_end, g, s.gamma_decay) * s.finetune_scale);
  return r;
}

namespace {

double pick_delta(const ExperimentConfig& cfg, const Dataset& data) {
  if (cfg.est_delta > 0.0) return cfg.est_delta;
  const double range = data.a.maxCoeff() - data.a.minCoeff();
  return range > 0.0 ? 0.05 * range : 0.05;
}

struct EstimateBundle {
  CausalEstimate est;
  std::vector<std::vector<std::string>> metric_rows;
};

// Estimands + metrics-vs-truth for one dataset (split label used in rows).
EstimateBundle estimate_on(const ExperimentConfig& cfg, const Checkpoint& ckpt,
                           const Dataset& data, const std::string& split,
                           std::uint64_t est_seed) {
  EstimateBundle out;
  EstimateOptions eo;
  eo.M = cfg.est_M;
  eo.sigma_z2 = resolve_sigma_z2(cfg, ckpt);
  eo.seed = est_seed;
  out.est.M = eo.M;
  out.est.seed = eo.seed;

  const StoNetModel& model = ckpt.model;
  auto add_metric = [&](const std::string& name, double value, double sd,
                        int n_items) {
    out.metric_rows.push_back({split, name, format_double(value),
                               format_double(sd), std::to_string(n_items)});
  };

  if (model.treatment_kind == TreatmentKind::Binary) {
    out.est.cate = cate_per_unit(model, data, eo);
    out.est.ate = out.est.cate.mean();
    out.est.psi["1"] = potential_outcome(model, data, Eigen::RowVectorXd::Ones(1), eo);
    out.est.psi["0"] = potential_outcome(model, data, Eigen::RowVectorXd::Zero(1), eo);
    if (data.truth) {
      if (data.truth->ate)
        add_metric("abs_error_ate", std::abs(*out.est.ate - *data.truth->ate), 0.0, 1);
      if (data.truth->cate.size() == data.n())
        add_metric("pehe", pehe(out.est.cate, data.truth->cate), 0.0, data.n());
    }
  } else {
    const double delta = pick_delta(cfg, data);
    out.est.marginal = marginal_effects(model, data, delta, eo);
    for (double g : cfg.est_grid) {
      Eigen::RowVectorXd a = Eigen::RowVectorXd::Constant(data.d_a(), g);
      out.est.psi[format_double(g)] = potential_outcome(model, data, a, eo);
    }
    if (data.truth && data.truth->z.size() > 0 &&
        (data.truth->dgp_kind == static_cast<int>(DgpKind::SeparableConfounding) ||
         data.truth->dgp_kind == static_cast<int>(DgpKind::NonSeparableConfounding))) {
      const TrueMarginalEffects truth = true_marginal_effects(*data.truth, data.a);
      double within = 0.0, mae = 0.0;
      for (Eigen::Index j = 0; j < truth.effect.size(); ++j) {
        const double err = std::abs(out.est.marginal->effect[j] - truth.effect[j]);
        mae += err;
        if (err <= 0.5 * truth.sd[j]) within += 1.0;
      }
      const double d = static_cast<double>(truth.effect.size());
      add_metric("marginal_effect_mae", mae / d, 0.0, static_cast<int>(d));
      add_metric("marginal_within_half_sd", within / d, 0.0, static_cast<int>(d));
    }
  }
  return out;
}

void write_estimate_outputs(const ExperimentConfig& cfg, const std::string& out_dir,
                            std::uint64_t master, const std::string& dataset_id,
                            const EstimateBundle& bundle,
                            std::vector<std::vector<std::string>>& metric_rows) {
  const std::string manifest = manifest_line(cfg, master);
  const CausalEstimate& est = bundle.est;

  std::vector<std::vector<std::string>> psi_rows;
  for (const auto& [label, psi] : est.psi)
    psi_rows.push_back({dataset_id, label, format_double(psi.value),
                        format_double(psi.se)});
  if (est.ate)
    psi_rows.push_back({dataset_id, "ate", format_double(*est.ate), ""});
  write_table_csv(path_join(out_dir, "psi.csv"), manifest,
                  {"dataset_id", "a", "psi_hat", "se"}, psi_rows);

  if (est.cate.size() > 0) {
    std::vector<std::vector<std::string>> rows;
    for (Eigen::Index i = 0; i < est.cate.size(); ++i)
      rows.push_back({std::to_string(i), format_double(est.cate[i])});
    write_table_csv(path_join(out_dir, "cate.csv"), manifest, {"unit", "cate_hat"},
                    rows);
  }
  if (est.marginal) {
    std::vector<std::vector<std::string>> rows;
    for (Eigen::Index j = 0; j < est.marginal->effect.size(); ++j)
      rows.push_back({std::to_string(j + 1), format_double(est.marginal->effect[j]),
                      format_double(est.marginal->se[j])});
    write_table_csv(path_join(out_dir, "marginal_effects.csv"), manifest,
                    {"treatment", "effect", "se"}, rows);
  }
  for (const auto& r : bundle.metric_rows) metric_rows.push_back(r);
}

}  // namespace

void run_generate(const ExperimentConfig& cfg, const std::string& out_dir,
                  std::uint64_t master) {
  if (!cfg.dgp) throw ConfigError("generate: needs a [dgp] section");
  ensure_dir(out_dir);
  SplitData d = acquire_data(cfg, derive_seed(master, {kTagDgp, 0}));
  write_dataset_csv(path_join(out_dir, "dataset_train.csv"), d.train);
  write_dataset_csv(path_join(out_dir, "dataset_val.csv"), d.val);
  write_dataset_csv(path_join(out_dir, "dataset_test.csv"), d.test);
  if (d.train.truth) {
    write_truth_csv(path_join(out_dir, "truth_train.csv"), *d.train.truth);
    write_truth_csv(path_join(out_dir, "truth_val.csv"), *d.val.truth);
    write_truth_csv(path_join(out_dir, "truth_test.csv"), *d.test.truth);
  }
  json m = manifest_to_json(*d.manifest);
  m["config_hash"] = cfg.config_hash;
  write_file(path_join(out_dir, "manifest.json"), m.dump(2) + "\n");
}

void run_train(const ExperimentConfig& cfg, const std::string& out_dir,
               std::uint64_t master) {
  ensure_dir(out_dir);
  SplitData d = acquire_data(cfg, derive_seed(master, {kTagDgp, 0}));
  TrainOutput t = train_on(cfg, d.train, derive_seed(master, {kTagModel, 0}),
                           derive_seed(master, {kTagSchedule, 0}));
  checkpoint_save(t.ckpt, path_join(out_dir, "checkpoint.json"));
  write_file(path_join(out_dir, "trainlog.csv"), t.log.to_csv());
}

void run_estimate(const ExperimentConfig& cfg, const std::string& out_dir,
                  std::uint64_t master) {
  ensure_dir(out_dir);
  SplitData d = acquire_data(cfg, derive_seed(master, {kTagDgp, 0}));
  const Checkpoint ckpt = checkpoint_load(path_join(out_dir, "checkpoint.json"));

  std::vector<std::vector<std::string>> metric_rows;
  const Dataset& eval = d.test.n() > 0 ? d.test : d.train;
  EstimateBundle main_bundle =
      estimate_on(cfg, ckpt, eval, d.test.n() > 0 ? "out_of_sample" : "in_sample",
                  derive_seed(master, {kTagEstimate, 0}));
  write_estimate_outputs(cfg, out_dir, master, "0", main_bundle, metric_rows);

  if (d.test.n() > 0) {
    const Dataset in_sample = concat_rows(d.train, d.val);
    EstimateBundle in_bundle = estimate_on(cfg, ckpt, in_sample, "in_sample",
                                           derive_seed(master, {kTagEstimate, 1}));
    for (const auto& r : in_bundle.metric_rows) metric_rows.push_back(r);
  }
  if (!metric_rows.empty())
    write_table_csv(path_join(out_dir, "metrics.csv"), manifest_line(cfg, master),
                    {"split", "metric", "value", "sd", "n"}, metric_rows);
}

void run_diagnose(const ExperimentConfig& cfg, const std::string& out_dir,
                  std::uint64_t master) {
  ensure_dir(out_dir);
  SplitData d = acquire_data(cfg, derive_seed(master, {kTagDgp, 0}));
  const Checkpoint ckpt = checkpoint_load(path_join(out_dir, "checkpoint.json"));

  OverlapOptions opts;
  opts.burn_in = cfg.diag_burn_in;
  opts.thin = cfg.diag_thin;
  opts.eps = cfg.diag_eps;
  opts.eta = cfg.diag_eta;
  Rng rng(derive_seed(master, {kTagDiag, 0}));
  const OverlapReport rep =
      overlap_stress_test(ckpt.model, d.train, cfg.diag_alpha, cfg.diag_B, rng, opts);

  json j{{"alpha", rep.alpha},
         {"B", rep.B},
         {"s_bar", rep.s_bar},
         {"s_values", std::vector<double>(rep.s_values.data(),
                                          rep.s_values.data() + rep.s_values.size())},
         {"manifest", manifest_line(cfg, master)}};
  write_file(path_join(out_dir, "overlap.json"), j.dump(2) + "\n");
}

void run_bootstrap(const ExperimentConfig& cfg, const std::string& out_dir,
                   std::uint64_t master) {
  ensure_dir(out_dir);
  SplitData d = acquire_data(cfg, derive_seed(master, {kTagDgp, 0}));
  const Checkpoint ckpt = checkpoint_load(path_join(out_dir, "checkpoint.json"));

  EstimateOptions eo;
  eo.M = cfg.boot_M;
  eo.sigma_z2 = resolve_sigma_z2(cfg, ckpt);
  eo.seed = derive_seed(master, {kTagEstimate, 0});
  const double tau_hat = ate(ckpt.model, d.train, eo);

  const FinalRates rates = final_stage_rates(cfg, d.train.n());
  BootstrapOptions opts;
  opts.B = cfg.boot_B;
  opts.level = cfg.boot_level;
  opts.short_epochs = cfg.boot_short_epochs;
  opts.eps = rates.eps;
  opts.gammas = rates.gammas;
  opts.eta = cfg.schedule.eta;
  opts.minibatch = cfg.schedule.minibatch;
  opts.hmc_steps_per_iter = cfg.schedule.hmc_steps_per_iter;
  opts.normalize_by_n = cfg.schedule.normalize_by_n;
  opts.leapfrog = cfg.schedule.leapfrog;
  opts.M = cfg.boot_M;
  opts.threads = env_thread_cap();
  const BootstrapResult res = bootstrap_ci(ckpt.model, d.train, cfg.prior, tau_hat,
                                           opts, derive_seed(master, {kTagBoot, 0}));

  json j{{"tau_hat", res.tau_hat},
         {"lower", res.lower},
         {"upper", res.upper},
         {"level", res.level},
         {"taus", std::vector<double>(res.taus.data(), res.taus.data() + res.taus.size())},
         {"manifest", manifest_line(cfg, master)}};
  write_file(path_join(out_dir, "bootstrap.json"), j.dump(2) + "\n");
}

BenchmarkOutput run_benchmark(const ExperimentConfig& cfg, const std::string& out_dir,
                              int threads) {
  if (!cfg.dgp) throw ConfigError("benchmark: needs a [dgp] section");
  ensure_dir(out_dir);
  const std::uint64_t master = cfg.master_seed;
  const int R = cfg.replications;
  const DgpKind kind = cfg.dgp->kind;

  BenchmarkOutput out;
  out.reps.resize(R);
  std::vector<std::string> errors(R);

  parallel_for(R, threads, [&](int r) {
    ExperimentConfig rep_cfg = cfg;
    if (rep_cfg.dgp->seed == 0 || R > 1)
      rep_cfg.dgp->seed = derive_seed(master, {kTagDgp, static_cast<std::uint64_t>(r)});
    SplitData d = acquire_data(rep_cfg, rep_cfg.dgp->seed);
    TrainOutput t =
        train_on(rep_cfg, d.train,
                 derive_seed(master, {kTagModel, static_cast<std::uint64_t>(r)}),
                 derive_seed(master, {kTagSchedule, static_cast<std::uint64_t>(r)}));

    ReplicationMetrics& m = out.reps[r];
    m.replication = r;

    EstimateOptions eo;
    eo.M = cfg.est_M;
    eo.sigma_z2 = resolve_sigma_z2(cfg, t.ckpt);
    eo.seed = derive_seed(master, {kTagEstimate, static_cast<std::uint64_t>(r)});

    if (is_binary_kind(kind)) {
      const Dataset in_sample = concat_rows(d.train, d.val);
      const Vector cate_in = cate_per_unit(t.ckpt.model, in_sample, eo);
      EstimateOptions eo_out = eo;
      eo_out.seed = derive_seed(eo.seed, {1});
      const Vector cate_out = cate_per_unit(t.ckpt.model, d.test, eo_out);
      m.ate_hat_in = cate_in.mean();
      m.ate_hat_out = cate_out.mean();
      m.ate_true = in_sample.truth && in_sample.truth->ate ? *in_sample.truth->ate
                                                           : std::nan("");
      if (in_sample.truth && in_sample.truth->cate.size() == in_sample.n())
        m.pehe_in = pehe(cate_in, in_sample.truth->cate);
      if (d.test.truth && d.test.truth->cate.size() == d.test.n())
        m.pehe_out = pehe(cate_out, d.test.truth->cate);
    } else {
      const double delta = pick_delta(cfg, d.test);
      const MarginalEffects me = marginal_effects(t.ckpt.model, d.test, delta, eo);
      const TrueMarginalEffects truth = true_marginal_effects(*d.test.truth, d.test.a);
      double within = 0.0;
      for (Eigen::Index j = 0; j < truth.effect.size(); ++j)
        if (std::abs(me.effect[j] - truth.effect[j]) <= 0.5 * truth.sd[j])
          within += 1.0;
      m.marginal_within_half_sd = within / static_cast<double>(truth.effect.size());
    }
  });

  // per-replication rows
  std::vector<std::vector<std::string>> rep_rows;
  for (const auto& m : out.reps)
    rep_rows.push_back({std::to_string(m.replication), format_double(m.ate_hat_in),
                        format_double(m.ate_hat_out), format_double(m.ate_true),
                        format_double(m.pehe_in), format_double(m.pehe_out),
                        format_double(m.marginal_within_half_sd)});
  write_table_csv(path_join(out_dir, "replications.csv"), manifest_line(cfg, master),
                  {"replication", "ate_hat_in", "ate_hat_out", "ate_true", "pehe_in",
                   "pehe_out", "marginal_within_half_sd"},
                  rep_rows);

  auto mean_sd = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0;
    for (double x : v) mean += x;
    mean /= n;
    double sd = 0;
    if (v.size() > 1) {
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = std::sqrt(sd / (n - 1.0));
    }
    return std::pair<double, double>{mean, sd};
  };

  if (is_binary_kind(kind)) {
    std::vector<double> pehe_in_parts, pehe_out_parts;
    std::vector<double> est_in, est_out, tru;
    for (const auto& m : out.reps) {
      if (!std::isnan(m.pehe_in)) pehe_in_parts.push_back(m.pehe_in);
      if (!std::isnan(m.pehe_out)) pehe_out_parts.push_back(m.pehe_out);
      if (!std::isnan(m.ate_hat_in) && !std::isnan(m.ate_true)) {
        est_in.push_back(m.ate_hat_in);
        est_out.push_back(m.ate_hat_out);
        tru.push_back(m.ate_true);
      }
    }
    out.table_header = {"method",        "metric",        "in_sample",
                        "in_sample_sd",  "out_of_sample", "out_of_sample_sd",
                        "n_replications"};
    if (!pehe_in_parts.empty() || !pehe_out_parts.empty()) {
      const auto [mi, si] = mean_sd(pehe_in_parts);
      const auto [mo, so] = mean_sd(pehe_out_parts);
      out.table.push_back({"CI-StoNet", "pehe", format_double(mi), format_double(si),
                           format_double(mo), format_double(so),
                           std::to_string(R)});
    }
    if (!est_in.empty()) {
      const MetricRecord rec_in = mae_ate(est_in, tru);
      const MetricRecord rec_out = mae_ate(est_out, tru);
      out.table.push_back({"CI-StoNet", "mae_ate", format_double(rec_in.value),
                           format_double(rec_in.sd), format_double(rec_out.value),
                           format_double(rec_out.sd), std::to_string(R)});
    }
  } else {
    std::vector<double> cover;
    for (const auto& m : out.reps)
      if (!std::isnan(m.marginal_within_half_sd))
        cover.push_back(m.marginal_within_half_sd);
    const auto [mc, sc] = mean_sd(cover);
    out.table_header = {"method", "metric", "value", "sd", "n_replications"};
    out.table.push_back({"CI-StoNet", "marginal_within_half_sd", format_double(mc),
                         format_double(sc), std::to_string(R)});
  }
  write_table_csv(path_join(out_dir, "benchmark.csv"), manifest_line(cfg, master),
                  out.table_header, out.table);
  return out;
}

}  // namespace cistonet
