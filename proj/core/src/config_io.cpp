// SPDX-License-Identifier: Apache-2.0
#include "streamrl/config_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json_convert.hpp"

namespace streamrl::config {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << text;
}

namespace {

json parse_config(const std::string& path, const std::string& expected_schema) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
  if (doc.value("schema", "") != expected_schema)
    throw ConfigError("config " + path + ": expected schema '" + expected_schema + "'");
  return doc;
}

std::string resolve_relative(const std::string& config_path, const std::string& target) {
  fs::path p(target);
  if (p.is_absolute()) return target;
  return (fs::path(config_path).parent_path() / p).string();
}

throughput::ClusterSpec cluster_spec_from_json(const json& doc,
                                               const throughput::UtilizationCurve& curve,
                                               const throughput::LengthDistribution& lengths,
                                               double default_tau, bool use_padding) {
  throughput::ClusterSpec spec;
  const std::string mode = doc.at("mode").get<std::string>();
  if (mode == "conventional") spec.mode = throughput::Mode::Conventional;
  else if (mode == "pipeline") spec.mode = throughput::Mode::Pipeline;
  else throw ConfigError("cluster spec: unknown mode " + mode);
  spec.n_accelerators = doc.at("n_accelerators").get<int>();
  spec.train_batch = doc.at("train_batch").get<int>();
  spec.steps_per_rl_step = doc.value("steps_per_rl_step", 1);
  spec.gen_batch = doc.value("gen_batch", 0);
  spec.inference_count = doc.value("inference_count", 0);
  spec.tau = doc.value("tau", default_tau);
  spec.use_padding = doc.value("use_padding", use_padding);
  spec.curve = doc.contains("curve_samples")
                   ? detail::curve_from_json(doc.at("curve_samples"))
                   : curve;
  spec.lengths = doc.contains("lengths") ? detail::lengths_from_json(doc.at("lengths")) : lengths;
  spec.validate();
  return spec;
}

}  // namespace

ModelConfig load_model_config(const std::string& path) {
  const json doc = parse_config(path, "streamrl.model_config/1");
  ModelConfig cfg;
  try {
    cfg.n_accelerators = doc.at("n_accelerators").get<int>();
    cfg.train_batch = doc.at("train_batch").get<int>();
    cfg.tau = doc.at("tau").get<double>();
    cfg.use_padding = doc.value("use_padding", false);
    cfg.lengths = detail::lengths_from_json(doc.at("lengths"));

    if (doc.contains("curve_samples")) {
      cfg.curve = detail::curve_from_json(doc.at("curve_samples"));
    } else {
      cfg.curve_path = resolve_relative(path, doc.at("curve").get<std::string>());
      if (!fs::exists(cfg.curve_path))
        throw ConfigError("curve file not found: " + cfg.curve_path);
      cfg.curve = throughput::UtilizationCurve::from_csv_file(cfg.curve_path);
    }
    if (doc.contains("padding_window")) cfg.curve.padding_window = doc.at("padding_window");
    if (doc.contains("flash")) {
      throughput::FlashScale scale;
      scale.flops_per_token = doc.at("flash").at("flops_per_token").get<double>();
      scale.peak_flops = doc.at("flash").at("peak_flops").get<double>();
      cfg.flash = scale;
    }

    if (doc.contains("search"))
      cfg.search_step_lag_cap = doc.at("search").at("max_lag_steps").get<long long>();
    if (doc.contains("speedup_vs_lag"))
      cfg.sample_lag_grid =
          doc.at("speedup_vs_lag").at("sample_lag_grid").get<std::vector<long long>>();
    if (doc.contains("case_study"))
      cfg.case_study_step_lag_cap = doc.at("case_study").value("max_lag_steps", 133LL);
    if (doc.contains("pareto")) {
      const json& pareto = doc.at("pareto");
      for (const auto& spec_doc : pareto.at("configs"))
        cfg.pareto_configs.push_back(
            cluster_spec_from_json(spec_doc, cfg.curve, cfg.lengths, cfg.tau, cfg.use_padding));
      cfg.pareto_proxy_kind = pareto.value("proxy", "inverse_one_plus_lag");
      if (pareto.contains("proxy_table")) {
        cfg.pareto_proxy_kind = "table";
        for (const auto& [key, value] : pareto.at("proxy_table").items())
          cfg.pareto_proxy[std::stoll(key)] = value.get<double>();
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return cfg;
}

sim::SimConfig load_sim_config(const std::string& path) {
  try {
    return sim::SimConfig::from_json(read_text_file(path));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("sim config " + path + ": " + e.what());
  }
}

RlCheckConfig load_rlcheck_config(const std::string& path) {
  const json doc = parse_config(path, "streamrl.rlcheck_config/1");
  RlCheckConfig cfg;
  try {
    cfg.experiment = doc.at("experiment").get<std::string>();
    cfg.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("ess")) {
      const json& e = doc.at("ess");
      cfg.ess_vocab_size = e.value("vocab_size", cfg.ess_vocab_size);
      cfg.ess_context_order = e.value("context_order", cfg.ess_context_order);
      cfg.ess_sample_count = e.value("sample_count", cfg.ess_sample_count);
      cfg.ess_max_len = e.value("max_len", cfg.ess_max_len);
      cfg.ess_drift_magnitude = e.value("drift_magnitude", cfg.ess_drift_magnitude);
      cfg.ess_clamp = e.value("clamp", cfg.ess_clamp);
      cfg.ess_per_token = e.value("per_token", cfg.ess_per_token);
      if (e.contains("trajectories"))
        cfg.ess_trajectories_path = resolve_relative(path, e.at("trajectories"));
      if (e.contains("target_policy"))
        cfg.ess_target_policy_path = resolve_relative(path, e.at("target_policy"));
    }
    if (doc.contains("gradcheck")) {
      const json& g = doc.at("gradcheck");
      cfg.grad_instances = g.value("instances", cfg.grad_instances);
      cfg.grad_max_params = g.value("max_params", cfg.grad_max_params);
      cfg.grad_fd_step = g.value("fd_step", cfg.grad_fd_step);
      cfg.grad_tolerance = g.value("tolerance", cfg.grad_tolerance);
    }
    if (doc.contains("mixed_kl")) {
      const json& k = doc.at("mixed_kl");
      cfg.kl_vocab_size = k.value("vocab_size", cfg.kl_vocab_size);
      cfg.kl_hidden_dim = k.value("hidden_dim", cfg.kl_hidden_dim);
      cfg.kl_max_lag = k.value("max_lag", cfg.kl_max_lag);
      cfg.kl_checkpoint_count = k.value("checkpoint_count", 0);
      cfg.kl_max_len = k.value("max_len", cfg.kl_max_len);
      cfg.kl_sample_count = k.value("sample_count", cfg.kl_sample_count);
      cfg.kl_drift_magnitude = k.value("drift_magnitude", cfg.kl_drift_magnitude);
      cfg.kl_conventional_lags = k.value("conventional_lags", std::vector<int>{});
      cfg.kl_seeds = k.value("seeds", std::vector<std::uint64_t>{});
    }
  } catch (const std::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (cfg.experiment != "ess" && cfg.experiment != "gradcheck" && cfg.experiment != "mixed-kl")
    throw ConfigError("config " + path + ": unknown experiment '" + cfg.experiment + "'");
  if (cfg.kl_seeds.empty()) cfg.kl_seeds = {1, 2, 3};
  if (cfg.kl_conventional_lags.empty()) cfg.kl_conventional_lags = {cfg.kl_max_lag};
  return cfg;
}

ServeConfig load_serve_config(const std::string& path) {
  const json doc = parse_config(path, "streamrl.serve_config/1");
  ServeConfig cfg;
  try {
    cfg.policy_path = resolve_relative(path, doc.at("policy").get<std::string>());
    cfg.host = doc.value("host", cfg.host);
    cfg.port = doc.value("port", 0);
    cfg.recompute_state = doc.value("recompute_state", false);
    cfg.start_paused = doc.value("start_paused", false);
  } catch (const std::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!fs::exists(cfg.policy_path)) throw ConfigError("policy file not found: " + cfg.policy_path);
  return cfg;
}

}  // namespace streamrl::config
