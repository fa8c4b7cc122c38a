#include "cistonet/checkpoint.hpp"

#include <json.hpp>

#include "cistonet/csv.hpp"

namespace cistonet {

using json = nlohmann::json;

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

json spec_to_json(const MlpSpec& spec) {
  return json{{"layer_widths", spec.layer_widths},
              {"hidden_activation", to_string(spec.hidden_activation)},
              {"output_activation", to_string(spec.output_activation)}};
}

MlpSpec spec_from_json(const json& j) {
  MlpSpec s;
  s.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  s.hidden_activation = activation_from_string(j.at("hidden_activation"));
  s.output_activation = output_activation_from_string(j.at("output_activation"));
  s.validate();
  return s;
}

json params_to_json(const MlpParams& p) {
  const Vector theta = p.flatten();
  return std::vector<double>(theta.data(), theta.data() + theta.size());
}

MlpParams params_from_json(const json& j, const MlpSpec& spec) {
  MlpParams p = MlpParams::zeros_like(spec);
  const auto v = j.get<std::vector<double>>();
  p.unflatten(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  return p;
}

json module_to_json(const MlpSpec& spec, const MlpParams& params,
                    const std::optional<MlpParams>& mask) {
  json m{{"spec", spec_to_json(spec)}, {"params", params_to_json(params)}};
  if (mask) m["mask"] = params_to_json(*mask);
  return m;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  const StoNetModel& m = ckpt.model;
  json payload{
      {"variant", to_string(m.variant)},
      {"treatment_kind", to_string(m.treatment_kind)},
      {"d_z", m.d_z},
      {"sigma_z2", m.sigma_z2},
      {"sigma_a2", m.sigma_a2},
      {"sigma_y2", m.sigma_y2},
      {"seed", m.seed},
      {"sigma_z2_hat", ckpt.sigma_z2_hat},
      {"latent", module_to_json(m.latent_spec, m.latent_params, m.latent_mask)},
      {"outcome", module_to_json(m.outcome_spec, m.outcome_params, m.outcome_mask)},
  };
  if (m.treatment_spec)
    payload["treatment"] =
        module_to_json(*m.treatment_spec, *m.treatment_params, m.treatment_mask);

  const std::string body = payload.dump();
  json doc{{"format", kCheckpointVersion},
           {"checksum", fnv1a64(body)},
           {"payload", std::move(payload)}};
  return doc.dump(2) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint parse error: ") + e.what());
  }
  if (doc.value("format", "") != kCheckpointVersion)
    throw IoError("checkpoint version mismatch (want " +
                  std::string(kCheckpointVersion) + ")");
  const json& payload = doc.at("payload");
  if (fnv1a64(payload.dump()) != doc.at("checksum").get<std::uint64_t>())
    throw IoError("checkpoint checksum mismatch (file corrupted)");

  Checkpoint ckpt;
  StoNetModel& m = ckpt.model;
  m.variant = variant_from_string(payload.at("variant"));
  m.treatment_kind = treatment_kind_from_string(payload.at("treatment_kind"));
  m.d_z = payload.at("d_z").get<int>();
  m.sigma_z2 = payload.at("sigma_z2").get<double>();
  m.sigma_a2 = payload.at("sigma_a2").get<double>();
  m.sigma_y2 = payload.at("sigma_y2").get<double>();
  m.seed = payload.at("seed").get<std::uint64_t>();
  ckpt.sigma_z2_hat = payload.value("sigma_z2_hat", -1.0);

  auto load_module = [](const json& j, MlpSpec& spec, MlpParams& params,
                        std::optional<MlpParams>& mask) {
    spec = spec_from_json(j.at("spec"));
    params = params_from_json(j.at("params"), spec);
    if (j.contains("mask")) mask = params_from_json(j.at("mask"), spec);
  };
  load_module(payload.at("latent"), m.latent_spec, m.latent_params, m.latent_mask);
  load_module(payload.at("outcome"), m.outcome_spec, m.outcome_params, m.outcome_mask);
  if (payload.contains("treatment")) {
    m.treatment_spec.emplace();
    m.treatment_params.emplace();
    load_module(payload.at("treatment"), *m.treatment_spec, *m.treatment_params,
                m.treatment_mask);
  }
  return ckpt;
}

void checkpoint_save(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, checkpoint_to_json(ckpt));
}

Checkpoint checkpoint_load(const std::string& path) {
  return checkpoint_from_json(read_file(path));
}

}  // namespace cistonet
