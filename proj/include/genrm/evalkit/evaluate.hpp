#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "genrm/evalkit/judge.hpp"

namespace genrm::eval {

/// Wilson score interval; z = 1.959964 at the default confidence.
std::pair<double, double> wilson_ci(std::size_t correct, std::size_t total,
                                    double confidence = 0.95);

/// 1, 2, 4, ... below k_max, then k_max.
std::vector<std::size_t> k_grid(std::size_t k_max);

struct MetricRow {
  std::string method;
  std::string split;
  std::size_t k = 1;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;

  bool operator==(const MetricRow&) const = default;
};

struct MethodStats {
  std::string method;
  std::string split;
  std::size_t samples = 0;
  std::size_t invalid = 0;
  double invalid_rate = 0.0;
  std::optional<double> flip_rate;

  bool operator==(const MethodStats&) const = default;
};

struct EvalOptions {
  std::size_t k_max = 32;
  std::uint64_t seed = 0;
  // Average each pair's preference estimate with its swapped ordering's
  // before deciding.
  bool debias = false;
};

struct EvalResult {
  std::vector<MetricRow> rows;          // one per K (K = 1 only for deterministic judges)
  MethodStats stats;
  std::vector<Indicator> verdicts;      // Maj@k_max verdict per pair, in input order
};

/// Accuracy of `judge` on `pairs`. Gold labels are read only to score
/// verdicts. Pair p is judged with seed mix_seed(seed, p.pair_id).
EvalResult evaluate(const Judge& judge, const std::string& method, const std::string& split,
                    std::span<const world::PreferencePair> pairs, const EvalOptions& options);

struct FlipStats {
  std::size_t inconsistent = 0;
  std::size_t total = 0;
  double rate = 0.0;
};

/// Judges each pair as stored and with the responses swapped; a pair is
/// inconsistent when both orderings pick the same position.
FlipStats position_swap_consistency(const Judge& judge, std::span<const world::PreferencePair> pairs,
                                    std::uint64_t seed, std::size_t k = 1);

struct MetricsReport {
  std::vector<MetricRow> rows;
  std::vector<MethodStats> methods;
  std::string config_digest;
  std::vector<std::uint64_t> seeds;
  std::string version;

  /// Sorts rows by (method, split, K), stats by (method, split) and seeds.
  void normalize();
  bool operator==(const MetricsReport&) const = default;
};

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes report.json and metrics.csv (method, split, K, accuracy, ci_lo,
/// ci_hi with six decimals) into `dir`.
void emit_report(MetricsReport report, const std::filesystem::path& dir);
MetricsReport read_report(const std::filesystem::path& report_json);
std::vector<MetricRow> read_table(const std::filesystem::path& csv);

std::string format_fixed(double value);

}  // namespace genrm::eval
