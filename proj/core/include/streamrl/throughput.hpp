// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace streamrl::throughput {

/// Hardware-neutral time unit: the minimal amortized time of one token
/// forward pass, flops_per_token / peak_flops. All model arithmetic is in
/// these units; seconds only appear in report labeling.
struct FlashScale {
  double flops_per_token = 0.0;
  double peak_flops = 0.0;
};

double flash_seconds(const FlashScale& scale);

/// Sampled accelerator utilization as a function of generation batch size.
/// Queries below the first sample extrapolate linearly through the origin;
/// queries above the last sample clamp to its value.
struct UtilizationCurve {
  struct Sample {
    double batch_size = 0.0;
    double utilization = 0.0;
  };

  std::vector<Sample> samples;
  int padding_window = 64;

  void validate() const;
  double last_batch_size() const;

  /// Piecewise-linear interpolation at batch size h.
  double value_at(double h) const;

  /// With padding, a batch may be padded to a faster integer size h' in
  /// [h, h + padding_window]; only the h useful rows count, so the value is
  /// max over h' of (h / h') * U(h'), never below the unpadded value.
  double value_at(double h, bool use_padding) const;

  static UtilizationCurve from_csv_file(const std::string& path);
  void to_csv_file(const std::string& path) const;
};

/// Sequence-length law with exact survival function and mean.
struct LengthDistribution {
  enum class Kind { Uniform, Constant, Empirical };

  Kind kind = Kind::Constant;
  int max_len = 1;
  std::vector<int> values;  // Empirical only

  static LengthDistribution uniform(int max_len);
  static LengthDistribution constant(int len);
  static LengthDistribution empirical(std::vector<int> values);

  void validate() const;
  double mean() const;
  /// P(length >= l).
  double survival(int l) const;
};

enum class Mode { Conventional, Pipeline };
enum class LagUnit { Samples, OptimizerSteps };

std::string to_string(Mode mode);
std::string to_string(LagUnit unit);

struct ClusterSpec {
  Mode mode = Mode::Conventional;
  int n_accelerators = 1;
  int train_batch = 1;
  int steps_per_rl_step = 1;  // conventional
  int gen_batch = 0;          // pipeline
  int inference_count = 0;    // pipeline
  double tau = 1.0;           // flashes per trained token
  bool use_padding = false;
  UtilizationCurve curve;
  LengthDistribution lengths;

  void validate() const;
  long long sequences_per_rl_step() const;                  // S = B * G
  double tokens_per_rl_step() const;                        // K = S * mean length
};

/// Lag figures carry an explicit unit tag: conventional lag is counted in
/// samples (S - 1), pipeline lag in optimizer steps; mixing the two silently
/// is a classic way to misread these reports.
struct ThroughputReport {
  Mode mode = Mode::Conventional;
  double r_gen = 0.0;    // tokens per flash
  double r_train = 0.0;  // tokens per flash
  double r_total = 0.0;  // tokens per flash
  double t_gen = 0.0;    // flashes
  double t_train = 0.0;  // flashes
  long long max_lag = 0;
  LagUnit lag_unit = LagUnit::Samples;
};

/// Expected number of sequences still decoding at step l, for l = 1..L:
/// h(l) = s * P(length >= l).
std::vector<double> inflight_profile(const LengthDistribution& lengths, long long s);

struct PhaseTimes {
  double t_gen = 0.0;
  double t_train = 0.0;
};

PhaseTimes conv_times(const ClusterSpec& spec);
ThroughputReport conv_throughput(const ClusterSpec& spec);
ThroughputReport pipeline_throughput(const ClusterSpec& spec);

/// ceil(H * I * L / (mean_len * B)): optimizer steps by which the oldest
/// token of a worst-case sequence lags the trainer.
long long pipeline_max_lag_steps(long long gen_batch, long long inference_count, double max_len,
                                 double mean_len, long long train_batch);

struct SearchResult {
  bool feasible = false;
  int gen_batch = 0;
  int inference_count = 0;
  ThroughputReport report;
};

/// Exhaustive (H, I) search: I over [1, N-1], H over every integer up to the
/// curve's last sample. Keeps configs with max lag <= step cap; maximizes
/// r_total with ties broken by smaller lag, then smaller I, then smaller H.
SearchResult search_configs(int n_accelerators, int train_batch, const UtilizationCurve& curve,
                            double tau, const LengthDistribution& lengths,
                            long long max_lag_steps_cap, bool use_padding = false);

/// One row of the lag sweep. Caps are taken in sample units (the common
/// currency of the two modes): the conventional side runs S = cap + 1
/// sequences per RL step so its sample lag S - 1 equals the cap; the
/// pipeline side searches under the equivalent step cap floor(cap / B).
struct LagSweepRow {
  long long sample_lag_cap = 0;
  long long step_lag_cap = 0;
  SearchResult pipeline;
  double r_conv = 0.0;
  double r_conv_gen = 0.0;
  double r_conv_train = 0.0;
  long long conv_sequences = 0;
  double speedup = 0.0;
};

std::vector<LagSweepRow> speedup_vs_lag(int n_accelerators, int train_batch,
                                        const UtilizationCurve& curve, double tau,
                                        const LengthDistribution& lengths,
                                        std::span<const long long> sample_lag_grid,
                                        bool use_padding = false);

/// Conventional throughput for an explicit sequence count S (the sweep needs
/// S values that are not multiples of the train batch).
ThroughputReport conv_throughput_for_sequences(int n_accelerators, long long sequences, double tau,
                                               const UtilizationCurve& curve,
                                               const LengthDistribution& lengths,
                                               bool use_padding = false);

struct ParetoPoint {
  Mode mode = Mode::Conventional;
  long long max_lag = 0;
  LagUnit lag_unit = LagUnit::Samples;
  double tokens_per_flash = 0.0;
  double samples_per_flash = 0.0;  // throughput axis
  double effectiveness = 0.0;      // user-supplied proxy at this lag
  double learning_speed = 0.0;     // throughput x effectiveness
};

/// Throughput/effectiveness pairs plus their product for a set of cluster
/// configurations; `effectiveness_proxy` must cover every produced lag.
std::vector<ParetoPoint> pareto_points(std::span<const ClusterSpec> configs,
                                       const std::map<long long, double>& effectiveness_proxy);

}  // namespace streamrl::throughput
