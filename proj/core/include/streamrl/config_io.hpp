// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamrl/sim.hpp"
#include "streamrl/throughput.hpp"

namespace streamrl::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Inputs for the analytical model commands. One file drives all four
/// studies; sections are optional and only read by the study that needs
/// them. Schema "streamrl.model_config/1".
struct ModelConfig {
  int n_accelerators = 1;
  int train_batch = 1;
  double tau = 1.0;
  bool use_padding = false;
  std::string curve_path;  // resolved relative to the config file
  throughput::UtilizationCurve curve;
  throughput::LengthDistribution lengths;
  std::optional<throughput::FlashScale> flash;  // labels reports in seconds

  std::optional<long long> search_step_lag_cap;
  std::vector<long long> sample_lag_grid;           // speedup-vs-lag
  std::optional<long long> case_study_step_lag_cap; // defaults to 133
  std::vector<throughput::ClusterSpec> pareto_configs;
  std::map<long long, double> pareto_proxy;
  std::string pareto_proxy_kind;  // "table" | "inverse_one_plus_lag"
};

ModelConfig load_model_config(const std::string& path);

sim::SimConfig load_sim_config(const std::string& path);

/// Inputs for the rlcheck experiments. Schema "streamrl.rlcheck_config/1".
struct RlCheckConfig {
  std::string experiment;  // "ess" | "gradcheck" | "mixed-kl"
  std::uint64_t seed = 0;

  // ess
  int ess_vocab_size = 8;
  int ess_context_order = 0;
  int ess_sample_count = 256;
  int ess_max_len = 16;
  double ess_drift_magnitude = 0.1;
  double ess_clamp = 5.0;
  bool ess_per_token = false;
  std::string ess_trajectories_path;   // optional JSONL input
  std::string ess_target_policy_path;  // required with the above

  // gradcheck
  int grad_instances = 50;
  int grad_max_params = 100;
  double grad_fd_step = 1e-5;
  double grad_tolerance = 1e-4;

  // mixed-kl
  int kl_vocab_size = 12;
  int kl_hidden_dim = 8;
  int kl_max_lag = 32;
  int kl_checkpoint_count = 0;  // 0: max_lag + 1
  int kl_max_len = 64;
  int kl_sample_count = 32;
  double kl_drift_magnitude = 0.05;
  std::vector<int> kl_conventional_lags;
  std::vector<std::uint64_t> kl_seeds;
};

RlCheckConfig load_rlcheck_config(const std::string& path);

/// Serve command inputs. Schema "streamrl.serve_config/1".
struct ServeConfig {
  std::string policy_path;
  std::string host = "127.0.0.1";
  int port = 0;
  bool recompute_state = false;
  bool start_paused = false;
};

ServeConfig load_serve_config(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace streamrl::config
