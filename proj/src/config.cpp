#include "cistonet/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <sstream>

#include "cistonet/checkpoint.hpp"

namespace cistonet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& s, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    throw ConfigError("config: bad number for " + key + ": '" + s + "'");
  return v;
}

long to_long(const std::string& s, const std::string& key) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    throw ConfigError("config: bad integer for " + key + ": '" + s + "'");
  return v;
}

bool to_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

class Section {
 public:
  Section(const IniData& ini, std::string name) : name_(std::move(name)) {
    auto it = ini.find(name_);
    if (it != ini.end()) kv_ = &it->second;
  }
  bool present() const { return kv_ != nullptr; }
  bool has(const std::string& key) const { return kv_ && kv_->count(key); }
  std::string str(const std::string& key, const std::string& dflt) const {
    return has(key) ? kv_->at(key) : dflt;
  }
  std::string require(const std::string& key) const {
    if (!has(key)) throw ConfigError("config: [" + name_ + "] " + key + " is required");
    return kv_->at(key);
  }
  double num(const std::string& key, double dflt) const {
    return has(key) ? to_double(kv_->at(key), name_ + "." + key) : dflt;
  }
  long integer(const std::string& key, long dflt) const {
    return has(key) ? to_long(kv_->at(key), name_ + "." + key) : dflt;
  }
  bool boolean(const std::string& key, bool dflt) const {
    return has(key) ? to_bool(kv_->at(key), name_ + "." + key) : dflt;
  }
  std::vector<double> num_list(const std::string& key) const {
    std::vector<double> out;
    if (!has(key)) return out;
    for (const auto& s : split_list(kv_->at(key)))
      out.push_back(to_double(s, name_ + "." + key));
    return out;
  }
  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    if (!has(key)) return out;
    for (const auto& s : split_list(kv_->at(key)))
      out.push_back(static_cast<int>(to_long(s, name_ + "." + key)));
    return out;
  }

 private:
  std::string name_;
  const std::map<std::string, std::string>* kv_ = nullptr;
};

Decay parse_decay(const std::string& s, const std::string& key) {
  const auto parts = split_list([&] {
    std::string t = s;
    for (char& c : t)
      if (c == ':') c = ',';
    return t;
  }());
  Decay d;
  if (parts.empty()) throw ConfigError("config: empty decay for " + key);
  if (parts[0] == "empirical") {
    d.kind = DecayKind::Empirical;
    if (parts.size() > 1) d.alpha = to_double(parts[1], key);
  } else if (parts[0] == "harmonic") {
    d.kind = DecayKind::Harmonic;
    if (parts.size() > 1) d.alpha = to_double(parts[1], key);
    if (parts.size() > 2) d.c_e = to_double(parts[2], key);
  } else {
    throw ConfigError("config: decay must be empirical[:alpha] or harmonic[:alpha[:c_e]]");
  }
  return d;
}

}  // namespace

IniData parse_ini(const std::string& text) {
  IniData ini;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto cut = raw.find_first_of("#;");
    std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section at line " + std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      ini[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError("config: empty key at line " + std::to_string(line_no));
    ini[section][key] = trim(line.substr(eq + 1));
  }
  return ini;
}

ExperimentConfig config_from_ini(const IniData& ini, const std::string& source_text) {
  ExperimentConfig cfg;
  {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(source_text)));
    cfg.config_hash = buf;
  }

  const Section run(ini, "run");
  cfg.replications = static_cast<int>(run.integer("replications", 1));
  if (cfg.replications < 1) throw ConfigError("config: replications must be >= 1");
  cfg.master_seed = static_cast<std::uint64_t>(run.integer("master_seed", 0));

  const Section dgp(ini, "dgp");
  const Section data(ini, "data");
  if (dgp.present() && data.present())
    throw ConfigError("config: give either [dgp] or [data], not both");
  if (dgp.present()) {
    DgpSpec spec;
    spec.kind = dgp_kind_from_string(dgp.require("kind"));
    spec.n_train = static_cast<int>(dgp.integer("n_train", 1000));
    spec.n_val = static_cast<int>(dgp.integer("n_val", 500));
    spec.n_test = static_cast<int>(dgp.integer("n_test", 500));
    spec.seed = static_cast<std::uint64_t>(dgp.integer("seed", 0));
    const auto beta = dgp.num_list("beta");
    if (!beta.empty())
      spec.beta = Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    const auto theta = dgp.num_list("theta");
    if (!theta.empty())
      spec.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    if (dgp.has("theta0")) spec.theta0 = dgp.num("theta0", 0.0);
    spec.tau = dgp.num("tau", 3.0);
    spec.misspec_gamma = dgp.num("gamma", 0.5);
    cfg.dgp = std::move(spec);
  }
  if (data.present()) {
    DataPaths p;
    p.train_csv = data.require("train_csv");
    p.val_csv = data.str("val_csv", "");
    p.test_csv = data.str("test_csv", "");
    for (const auto& c : split_list(data.str("treatment_cols", "")))
      if (!c.empty()) p.schema.treatment_cols.push_back(c);
    for (const auto& c : split_list(data.str("outcome_cols", "")))
      if (!c.empty()) p.schema.outcome_cols.push_back(c);
    for (const auto& c : split_list(data.str("proxy_cols", "")))
      if (!c.empty()) p.schema.proxy_cols.push_back(c);
    cfg.data = std::move(p);
  }

  const Section model(ini, "model");
  cfg.model.variant = variant_from_string(model.str("variant", "simple_confounding"));
  cfg.model.treatment_kind =
      treatment_kind_from_string(model.str("treatment_kind", "continuous"));
  cfg.model.d_z = static_cast<int>(model.integer("d_z", 6));
  cfg.model.d_a = static_cast<int>(model.integer("d_a", 0));
  cfg.model.d_y = static_cast<int>(model.integer("d_y", 0));
  cfg.model.d_x = static_cast<int>(model.integer("d_x", 0));
  cfg.model.latent_hidden = model.int_list("latent_hidden");
  if (cfg.model.latent_hidden.empty()) cfg.model.latent_hidden = {32};
  cfg.model.treatment_hidden = model.int_list("treatment_hidden");
  if (cfg.model.treatment_hidden.empty()) cfg.model.treatment_hidden = {16};
  cfg.model.outcome_hidden = model.int_list("outcome_hidden");
  if (cfg.model.outcome_hidden.empty()) cfg.model.outcome_hidden = {8, 4};
  cfg.model.hidden_activation = activation_from_string(model.str("hidden_activation", "tanh"));
  cfg.model.sigma_z2 = model.num("sigma_z2", 1e-5);
  cfg.model.sigma_a2 = model.num("sigma_a2", 1e-4);
  cfg.model.sigma_y2 = model.num("sigma_y2", 1e-3);
  cfg.model.init_scale = model.num("init_scale", 1.0);

  const Section sched(ini, "schedule");
  cfg.schedule.pretrain_epochs = static_cast<int>(sched.integer("pretrain_epochs", 100));
  cfg.schedule.train_epochs = static_cast<int>(sched.integer("train_epochs", 500));
  cfg.schedule.finetune_epochs = static_cast<int>(sched.integer("finetune_epochs", 100));
  cfg.schedule.eps0 = sched.num("eps0", 1e-3);
  cfg.schedule.gamma0 = sched.num_list("gamma0");
  if (cfg.schedule.gamma0.empty()) cfg.schedule.gamma0 = {5e-7, 5e-6};
  cfg.schedule.eta = sched.num("eta", 1.0);
  cfg.schedule.eps_decay = parse_decay(sched.str("eps_decay", "empirical:0.95"), "eps_decay");
  cfg.schedule.gamma_decay = parse_decay(sched.str("gamma_decay", "empirical:0.7"), "gamma_decay");
  cfg.schedule.hmc_steps_per_iter = static_cast<int>(sched.integer("hmc_steps_per_iter", 1));
  cfg.schedule.minibatch = static_cast<int>(sched.integer("minibatch", 0));
  cfg.schedule.finetune_scale = sched.num("finetune_scale", 0.1);
  cfg.schedule.normalize_by_n = sched.boolean("normalize_by_n", true);
  cfg.schedule.leapfrog = sched.boolean("leapfrog", false);
  cfg.schedule.update_sigma_z_each_epoch = sched.boolean("update_sigma_z_each_epoch", false);

  const Section prior(ini, "prior");
  cfg.prior = PriorHyper::from_variances(prior.num("lambda_n", 1e-6),
                                         prior.num("sigma0_sq", 1e-4),
                                         prior.num("sigma1_sq", 1e-1));
  cfg.prior_c = prior.num("c", 1.1);
  cfg.prior_delta_n = prior.num("delta_n", 0.1);

  const Section est(ini, "estimate");
  cfg.est_M = static_cast<int>(est.integer("M", 100));
  cfg.est_delta = est.num("delta", -1.0);
  cfg.est_grid = est.num_list("grid");
  cfg.sigma_mode = est.str("sigma_mode", "hat");
  if (cfg.sigma_mode != "hat" && cfg.sigma_mode != "model" && cfg.sigma_mode != "fixed")
    throw ConfigError("config: estimate.sigma_mode must be hat|model|fixed");
  cfg.sigma_fixed = est.num("sigma_fixed", 0.0);

  const Section diag(ini, "diagnostics");
  cfg.diag_alpha = diag.num("alpha", 0.1);
  cfg.diag_B = static_cast<int>(diag.integer("B", 20));
  cfg.diag_burn_in = static_cast<int>(diag.integer("burn_in", 200));
  cfg.diag_thin = static_cast<int>(diag.integer("thin", 10));
  cfg.diag_eps = diag.num("eps", -1.0);
  cfg.diag_eta = diag.num("eta", -1.0);

  const Section boot(ini, "bootstrap");
  cfg.boot_B = static_cast<int>(boot.integer("B", 100));
  cfg.boot_level = boot.num("level", 0.95);
  cfg.boot_short_epochs = static_cast<int>(boot.integer("short_epochs", 20));
  cfg.boot_M = static_cast<int>(boot.integer("M", 100));

  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  const std::string text = read_file(path);
  return config_from_ini(parse_ini(text), text);
}

}  // namespace cistonet
