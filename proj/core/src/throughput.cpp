// SPDX-License-Identifier: Apache-2.0
#include "streamrl/throughput.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "streamrl/csv.hpp"

namespace streamrl::throughput {

double flash_seconds(const FlashScale& scale) {
  if (scale.flops_per_token <= 0.0 || scale.peak_flops <= 0.0)
    throw std::invalid_argument("FlashScale: fields must be strictly positive");
  return scale.flops_per_token / scale.peak_flops;
}

void UtilizationCurve::validate() const {
  if (samples.empty()) throw std::invalid_argument("UtilizationCurve: no samples");
  if (padding_window < 0) throw std::invalid_argument("UtilizationCurve: negative padding window");
  double prev = 0.0;
  for (const auto& s : samples) {
    if (s.batch_size <= prev)
      throw std::invalid_argument("UtilizationCurve: batch sizes must be strictly increasing");
    if (!(s.utilization > 0.0) || s.utilization > 1.0)
      throw std::invalid_argument("UtilizationCurve: utilization must be in (0, 1]");
    prev = s.batch_size;
  }
}

double UtilizationCurve::last_batch_size() const {
  validate();
  return samples.back().batch_size;
}

double UtilizationCurve::value_at(double h) const {
  validate();
  if (!(h > 0.0)) throw std::invalid_argument("UtilizationCurve: batch size must be positive");
  if (h <= samples.front().batch_size) {
    // Linear through the origin below the first sample.
    return samples.front().utilization * (h / samples.front().batch_size);
  }
  if (h >= samples.back().batch_size) return samples.back().utilization;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (h <= samples[i].batch_size) {
      const auto& lo = samples[i - 1];
      const auto& hi = samples[i];
      const double w = (h - lo.batch_size) / (hi.batch_size - lo.batch_size);
      return lo.utilization + w * (hi.utilization - lo.utilization);
    }
  }
  return samples.back().utilization;  // unreachable
}

double UtilizationCurve::value_at(double h, bool use_padding) const {
  double best = value_at(h);
  if (!use_padding) return best;
  const auto first = static_cast<long long>(std::ceil(h));
  const auto last = static_cast<long long>(std::floor(h)) + padding_window;
  for (long long hp = std::max<long long>(first, 1); hp <= last; ++hp) {
    const double padded = (h / static_cast<double>(hp)) * value_at(static_cast<double>(hp));
    best = std::max(best, padded);
  }
  return best;
}

UtilizationCurve UtilizationCurve::from_csv_file(const std::string& path) {
  const auto table = csv::read_file(path);
  if (table.columns.size() != 2 || table.columns[0] != "h" || table.columns[1] != "utilization")
    throw std::invalid_argument("utilization curve: expected header 'h,utilization' in " + path);
  UtilizationCurve curve;
  for (const auto& row : table.rows) {
    if (row.size() != 2) throw std::invalid_argument("utilization curve: malformed row in " + path);
    curve.samples.push_back({std::stod(row[0]), std::stod(row[1])});
  }
  curve.validate();
  return curve;
}

void UtilizationCurve::to_csv_file(const std::string& path) const {
  validate();
  csv::Writer w(path);
  w.header({"h", "utilization"});
  for (const auto& s : samples)
    w.row_strings({csv::format_double(s.batch_size), csv::format_double(s.utilization)});
}

LengthDistribution LengthDistribution::uniform(int max_len) {
  LengthDistribution d;
  d.kind = Kind::Uniform;
  d.max_len = max_len;
  d.validate();
  return d;
}

LengthDistribution LengthDistribution::constant(int len) {
  LengthDistribution d;
  d.kind = Kind::Constant;
  d.max_len = len;
  d.validate();
  return d;
}

LengthDistribution LengthDistribution::empirical(std::vector<int> values) {
  LengthDistribution d;
  d.kind = Kind::Empirical;
  d.values = std::move(values);
  d.max_len = d.values.empty() ? 0 : *std::max_element(d.values.begin(), d.values.end());
  d.validate();
  return d;
}

void LengthDistribution::validate() const {
  if (max_len < 1) throw std::invalid_argument("LengthDistribution: max_len must be positive");
  if (kind == Kind::Empirical) {
    if (values.empty()) throw std::invalid_argument("LengthDistribution: empty empirical list");
    for (int v : values)
      if (v < 1 || v > max_len)
        throw std::invalid_argument("LengthDistribution: empirical value outside [1, max_len]");
  }
}

double LengthDistribution::mean() const {
  validate();
  switch (kind) {
    case Kind::Uniform:
      return (1.0 + max_len) / 2.0;
    case Kind::Constant:
      return max_len;
    case Kind::Empirical: {
      double s = 0.0;
      for (int v : values) s += v;
      return s / static_cast<double>(values.size());
    }
  }
  return max_len;
}

double LengthDistribution::survival(int l) const {
  validate();
  if (l <= 1) return 1.0;
  if (l > max_len) return 0.0;
  switch (kind) {
    case Kind::Uniform:
      return static_cast<double>(max_len - l + 1) / max_len;
    case Kind::Constant:
      return 1.0;
    case Kind::Empirical: {
      long long n = 0;
      for (int v : values)
        if (v >= l) ++n;
      return static_cast<double>(n) / static_cast<double>(values.size());
    }
  }
  return 0.0;
}

std::string to_string(Mode mode) {
  return mode == Mode::Conventional ? "conventional" : "pipeline";
}

std::string to_string(LagUnit unit) {
  return unit == LagUnit::Samples ? "samples" : "optimizer_steps";
}

void ClusterSpec::validate() const {
  if (n_accelerators < 1) throw std::invalid_argument("ClusterSpec: n_accelerators must be >= 1");
  if (train_batch < 1) throw std::invalid_argument("ClusterSpec: train_batch must be >= 1");
  if (!(tau > 0.0)) throw std::invalid_argument("ClusterSpec: tau must be positive");
  curve.validate();
  lengths.validate();
  if (mode == Mode::Conventional) {
    if (steps_per_rl_step < 1)
      throw std::invalid_argument("ClusterSpec: steps_per_rl_step must be >= 1");
  } else {
    if (gen_batch < 1) throw std::invalid_argument("ClusterSpec: gen_batch must be >= 1");
    if (inference_count < 1 || inference_count >= n_accelerators)
      throw std::invalid_argument("ClusterSpec: need 1 <= inference_count < n_accelerators");
  }
}

long long ClusterSpec::sequences_per_rl_step() const {
  return static_cast<long long>(train_batch) * steps_per_rl_step;
}

double ClusterSpec::tokens_per_rl_step() const {
  return static_cast<double>(sequences_per_rl_step()) * lengths.mean();
}

std::vector<double> inflight_profile(const LengthDistribution& lengths, long long s) {
  if (s < 1) throw std::invalid_argument("inflight_profile: s must be >= 1");
  lengths.validate();
  std::vector<double> h(lengths.max_len);
  for (int l = 1; l <= lengths.max_len; ++l)
    h[l - 1] = static_cast<double>(s) * lengths.survival(l);
  return h;
}

namespace {

PhaseTimes conv_times_impl(int n_accelerators, long long sequences, double tau,
                           const UtilizationCurve& curve, const LengthDistribution& lengths,
                           bool use_padding) {
  const auto profile = inflight_profile(lengths, sequences);
  double t_gen = 0.0;
  for (double h : profile) {
    if (h <= 0.0) continue;
    const double per_unit = h / n_accelerators;
    t_gen += per_unit / curve.value_at(per_unit, use_padding);
  }
  const double tokens = static_cast<double>(sequences) * lengths.mean();
  return {t_gen, tokens * tau / n_accelerators};
}

ThroughputReport conv_report(int n_accelerators, long long sequences, double tau,
                             const UtilizationCurve& curve, const LengthDistribution& lengths,
                             bool use_padding) {
  const PhaseTimes times = conv_times_impl(n_accelerators, sequences, tau, curve, lengths,
                                           use_padding);
  const double tokens = static_cast<double>(sequences) * lengths.mean();
  ThroughputReport r;
  r.mode = Mode::Conventional;
  r.t_gen = times.t_gen;
  r.t_train = times.t_train;
  r.r_gen = tokens / times.t_gen;
  r.r_train = n_accelerators / tau;
  r.r_total = tokens / (times.t_gen + times.t_train);
  r.max_lag = sequences - 1;
  r.lag_unit = LagUnit::Samples;
  return r;
}

}  // namespace

PhaseTimes conv_times(const ClusterSpec& spec) {
  spec.validate();
  if (spec.mode != Mode::Conventional)
    throw std::invalid_argument("conv_times: spec is not conventional-mode");
  return conv_times_impl(spec.n_accelerators, spec.sequences_per_rl_step(), spec.tau, spec.curve,
                         spec.lengths, spec.use_padding);
}

ThroughputReport conv_throughput(const ClusterSpec& spec) {
  spec.validate();
  if (spec.mode != Mode::Conventional)
    throw std::invalid_argument("conv_throughput: spec is not conventional-mode");
  return conv_report(spec.n_accelerators, spec.sequences_per_rl_step(), spec.tau, spec.curve,
                     spec.lengths, spec.use_padding);
}

ThroughputReport conv_throughput_for_sequences(int n_accelerators, long long sequences, double tau,
                                               const UtilizationCurve& curve,
                                               const LengthDistribution& lengths,
                                               bool use_padding) {
  if (n_accelerators < 1 || sequences < 1 || !(tau > 0.0))
    throw std::invalid_argument("conv_throughput_for_sequences: invalid arguments");
  return conv_report(n_accelerators, sequences, tau, curve, lengths, use_padding);
}

long long pipeline_max_lag_steps(long long gen_batch, long long inference_count, double max_len,
                                 double mean_len, long long train_batch) {
  if (gen_batch < 1 || inference_count < 1 || train_batch < 1 || !(max_len > 0.0) ||
      !(mean_len > 0.0))
    throw std::invalid_argument("pipeline_max_lag_steps: invalid arguments");
  const double tokens_per_longest_seq =
      static_cast<double>(gen_batch) * static_cast<double>(inference_count) * max_len;
  return static_cast<long long>(
      std::ceil(tokens_per_longest_seq / (mean_len * static_cast<double>(train_batch))));
}

ThroughputReport pipeline_throughput(const ClusterSpec& spec) {
  spec.validate();
  if (spec.mode != Mode::Pipeline)
    throw std::invalid_argument("pipeline_throughput: spec is not pipeline-mode");
  ThroughputReport r;
  r.mode = Mode::Pipeline;
  r.r_gen = spec.curve.value_at(spec.gen_batch, spec.use_padding) * spec.inference_count;
  r.r_train = static_cast<double>(spec.n_accelerators - spec.inference_count) / spec.tau;
  r.r_total = std::min(r.r_gen, r.r_train);
  r.t_gen = 0.0;
  r.t_train = 0.0;
  r.max_lag = pipeline_max_lag_steps(spec.gen_batch, spec.inference_count, spec.lengths.max_len,
                                     spec.lengths.mean(), spec.train_batch);
  r.lag_unit = LagUnit::OptimizerSteps;
  return r;
}

SearchResult search_configs(int n_accelerators, int train_batch, const UtilizationCurve& curve,
                            double tau, const LengthDistribution& lengths,
                            long long max_lag_steps_cap, bool use_padding) {
  if (n_accelerators < 2) throw std::invalid_argument("search_configs: need n_accelerators >= 2");
  if (train_batch < 1) throw std::invalid_argument("search_configs: train_batch must be >= 1");
  if (max_lag_steps_cap < 1) throw std::invalid_argument("search_configs: cap must be >= 1");
  curve.validate();
  lengths.validate();

  const int h_limit = static_cast<int>(std::floor(curve.last_batch_size()));
  const double mean_len = lengths.mean();

  SearchResult best;
  for (int inference = 1; inference < n_accelerators; ++inference) {
    const double r_train = static_cast<double>(n_accelerators - inference) / tau;
    for (int h = 1; h <= h_limit; ++h) {
      const long long lag =
          pipeline_max_lag_steps(h, inference, lengths.max_len, mean_len, train_batch);
      if (lag > max_lag_steps_cap) break;  // lag grows with h
      const double r_gen = curve.value_at(h, use_padding) * inference;
      const double r_total = std::min(r_gen, r_train);
      const bool better =
          !best.feasible || r_total > best.report.r_total ||
          (r_total == best.report.r_total &&
           (lag < best.report.max_lag ||
            (lag == best.report.max_lag &&
             (inference < best.inference_count ||
              (inference == best.inference_count && h < best.gen_batch)))));
      if (better) {
        best.feasible = true;
        best.gen_batch = h;
        best.inference_count = inference;
        best.report.mode = Mode::Pipeline;
        best.report.r_gen = r_gen;
        best.report.r_train = r_train;
        best.report.r_total = r_total;
        best.report.max_lag = lag;
        best.report.lag_unit = LagUnit::OptimizerSteps;
      }
    }
  }
  return best;
}

std::vector<LagSweepRow> speedup_vs_lag(int n_accelerators, int train_batch,
                                        const UtilizationCurve& curve, double tau,
                                        const LengthDistribution& lengths,
                                        std::span<const long long> sample_lag_grid,
                                        bool use_padding) {
  if (sample_lag_grid.empty()) throw std::invalid_argument("speedup_vs_lag: empty lag grid");
  std::vector<LagSweepRow> rows;
  rows.reserve(sample_lag_grid.size());
  for (long long cap : sample_lag_grid) {
    if (cap < 1) throw std::invalid_argument("speedup_vs_lag: lag caps must be >= 1");
    LagSweepRow row;
    row.sample_lag_cap = cap;
    row.step_lag_cap = std::max<long long>(1, cap / train_batch);
    row.pipeline = search_configs(n_accelerators, train_batch, curve, tau, lengths,
                                  row.step_lag_cap, use_padding);
    row.conv_sequences = cap + 1;  // sample lag S - 1 == cap
    const ThroughputReport conv = conv_throughput_for_sequences(
        n_accelerators, row.conv_sequences, tau, curve, lengths, use_padding);
    row.r_conv = conv.r_total;
    row.r_conv_gen = conv.r_gen;
    row.r_conv_train = conv.r_train;
    row.speedup = row.pipeline.feasible && row.r_conv > 0.0
                      ? row.pipeline.report.r_total / row.r_conv
                      : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ParetoPoint> pareto_points(std::span<const ClusterSpec> configs,
                                       const std::map<long long, double>& effectiveness_proxy) {
  std::vector<ParetoPoint> points;
  points.reserve(configs.size());
  for (const auto& spec : configs) {
    spec.validate();
    const ThroughputReport report =
        spec.mode == Mode::Conventional ? conv_throughput(spec) : pipeline_throughput(spec);
    auto it = effectiveness_proxy.find(report.max_lag);
    if (it == effectiveness_proxy.end())
      throw std::invalid_argument("pareto_points: proxy missing lag value " +
                                  std::to_string(report.max_lag));
    ParetoPoint p;
    p.mode = spec.mode;
    p.max_lag = report.max_lag;
    p.lag_unit = report.lag_unit;
    p.tokens_per_flash = report.r_total;
    p.samples_per_flash = report.r_total / spec.lengths.mean();
    p.effectiveness = it->second;
    p.learning_speed = p.samples_per_flash * p.effectiveness;
    points.push_back(p);
  }
  return points;
}

}  // namespace streamrl::throughput
