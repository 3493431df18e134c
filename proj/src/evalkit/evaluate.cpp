#include "genrm/evalkit/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "genrm/common/digest.hpp"
#include "json.hpp"

namespace genrm::eval {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kSwapTag = 0x73776170;

// Two-sided standard normal quantile for `confidence`, by bisection on erfc.
double z_for(double confidence) {
  if (confidence == 0.95) return 1.959964;
  const double tail = 1.0 - confidence;
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > tail ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Indicator from_probability(double p_a) { return p_a >= 0.5 ? Indicator::kA : Indicator::kB; }

}  // namespace

std::pair<double, double> wilson_ci(std::size_t correct, std::size_t total, double confidence) {
  if (total == 0) throw std::invalid_argument("wilson_ci: total must be positive");
  if (correct > total) throw std::invalid_argument("wilson_ci: correct exceeds total");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw std::invalid_argument("wilson_ci: confidence must lie in (0, 1)");
  }
  const double z = z_for(confidence);
  const double n = static_cast<double>(total);
  const double p = static_cast<double>(correct) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  double lo = correct == 0 ? 0.0 : std::max(0.0, center - half);
  double hi = correct == total ? 1.0 : std::min(1.0, center + half);
  return {lo, hi};
}

std::vector<std::size_t> k_grid(std::size_t k_max) {
  if (k_max == 0) throw std::invalid_argument("k_max must be positive");
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; k < k_max; k *= 2) ks.push_back(k);
  ks.push_back(k_max);
  return ks;
}

EvalResult evaluate(const Judge& judge, const std::string& method, const std::string& split,
                    std::span<const world::PreferencePair> pairs, const EvalOptions& options) {
  if (pairs.empty()) throw std::invalid_argument("evaluate: empty split " + split);
  const std::vector<std::size_t> ks = judge.sampled() ? k_grid(options.k_max)
                                                      : std::vector<std::size_t>{1};
  std::vector<std::size_t> correct(ks.size(), 0);
  EvalResult result;
  result.stats.method = method;
  result.stats.split = split;
  for (const auto& pair : pairs) {
    const std::uint64_t seed = mix_seed(options.seed, pair.pair_id);
    const PairView view = view_of(pair);
    JudgeOutcome outcome = judge.judge(view, ks, seed);
    result.stats.samples += outcome.samples;
    result.stats.invalid += outcome.invalid;
    if (options.debias) {
      const JudgeOutcome other = judge.judge(swapped_view(view), ks, seed ^ kSwapTag);
      result.stats.samples += other.samples;
      result.stats.invalid += other.invalid;
      for (std::size_t i = 0; i < ks.size(); ++i) {
        outcome.p_a[i] = 0.5 * (outcome.p_a[i] + (1.0 - other.p_a[i]));
        outcome.verdicts[i] = from_probability(outcome.p_a[i]);
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
      if (outcome.verdicts[i] == pair.gold) ++correct[i];
    }
    result.verdicts.push_back(outcome.verdicts.back());
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const auto [lo, hi] = wilson_ci(correct[i], pairs.size());
    result.rows.push_back({method, split, ks[i], correct[i], pairs.size(),
                           static_cast<double>(correct[i]) / static_cast<double>(pairs.size()), lo,
                           hi});
  }
  result.stats.invalid_rate = result.stats.samples == 0
                                  ? 0.0
                                  : static_cast<double>(result.stats.invalid) /
                                        static_cast<double>(result.stats.samples);
  return result;
}

FlipStats position_swap_consistency(const Judge& judge, std::span<const world::PreferencePair> pairs,
                                    std::uint64_t seed, std::size_t k) {
  FlipStats out;
  const std::vector<std::size_t> ks{k};
  for (const auto& pair : pairs) {
    const std::uint64_t s = mix_seed(seed, pair.pair_id);
    const PairView view = view_of(pair);
    const Indicator original = judge.judge(view, ks, s).verdicts.at(0);
    const Indicator flipped = judge.judge(swapped_view(view), ks, s ^ kSwapTag).verdicts.at(0);
    if (original == flipped) ++out.inconsistent;
    ++out.total;
  }
  out.rate = out.total == 0 ? 0.0
                            : static_cast<double>(out.inconsistent) / static_cast<double>(out.total);
  return out;
}

void MetricsReport::normalize() {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.method, a.split, a.k) < std::tie(b.method, b.split, b.k);
  });
  std::stable_sort(methods.begin(), methods.end(), [](const MethodStats& a, const MethodStats& b) {
    return std::tie(a.method, a.split) < std::tie(b.method, b.split);
  });
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
}

std::string format_fixed(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  return buf;
}

void emit_report(MetricsReport report, const std::filesystem::path& dir) {
  report.normalize();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ReportError("cannot create " + dir.string() + ": " + ec.message());

  ojson rows = ojson::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method}, {"split", r.split}, {"k", r.k}, {"correct", r.correct},
                    {"total", r.total}, {"accuracy", format_fixed(r.accuracy)},
                    {"ci_lo", format_fixed(r.ci_lo)}, {"ci_hi", format_fixed(r.ci_hi)}});
  }
  ojson methods = ojson::array();
  for (const auto& m : report.methods) {
    ojson j{{"method", m.method}, {"split", m.split}, {"samples", m.samples},
            {"invalid", m.invalid}, {"invalid_rate", format_fixed(m.invalid_rate)}};
    j["flip_rate"] = m.flip_rate ? ojson(format_fixed(*m.flip_rate)) : ojson(nullptr);
    methods.push_back(std::move(j));
  }
  ojson doc{{"version", report.version},
            {"config_digest", report.config_digest},
            {"seeds", report.seeds},
            {"rows", rows},
            {"methods", methods}};

  const auto json_path = dir / "report.json";
  const auto csv_path = dir / "metrics.csv";
  std::ofstream json_out(json_path, std::ios::trunc);
  if (!json_out) throw ReportError("cannot open " + json_path.string() + " for writing");
  json_out << doc.dump(2) << '\n';
  if (!json_out) throw ReportError("write failed for " + json_path.string());

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw ReportError("cannot open " + csv_path.string() + " for writing");
  csv << "method,split,K,accuracy,ci_lo,ci_hi\n";
  for (const auto& r : report.rows) {
    csv << r.method << ',' << r.split << ',' << r.k << ',' << format_fixed(r.accuracy) << ','
        << format_fixed(r.ci_lo) << ',' << format_fixed(r.ci_hi) << '\n';
  }
  if (!csv) throw ReportError("write failed for " + csv_path.string());
}

MetricsReport read_report(const std::filesystem::path& report_json) {
  std::ifstream in(report_json);
  if (!in) throw ReportError("cannot open " + report_json.string());
  try {
    const ojson doc = ojson::parse(in);
    MetricsReport r;
    r.version = doc.at("version").get<std::string>();
    r.config_digest = doc.at("config_digest").get<std::string>();
    r.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& j : doc.at("rows")) {
      r.rows.push_back({j.at("method").get<std::string>(), j.at("split").get<std::string>(),
                        j.at("k").get<std::size_t>(), j.at("correct").get<std::size_t>(),
                        j.at("total").get<std::size_t>(),
                        std::stod(j.at("accuracy").get<std::string>()),
                        std::stod(j.at("ci_lo").get<std::string>()),
                        std::stod(j.at("ci_hi").get<std::string>())});
    }
    for (const auto& j : doc.at("methods")) {
      MethodStats m{j.at("method").get<std::string>(), j.at("split").get<std::string>(),
                    j.at("samples").get<std::size_t>(), j.at("invalid").get<std::size_t>(),
                    std::stod(j.at("invalid_rate").get<std::string>()), std::nullopt};
      if (!j.at("flip_rate").is_null()) m.flip_rate = std::stod(j.at("flip_rate").get<std::string>());
      r.methods.push_back(std::move(m));
    }
    return r;
  } catch (const std::exception& e) {
    throw ReportError(report_json.string() + ": " + e.what());
  }
}

std::vector<MetricRow> read_table(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw ReportError("cannot open " + csv.string());
  std::string line;
  std::getline(in, line);
  if (line != "method,split,K,accuracy,ci_lo,ci_hi") throw ReportError(csv.string() + ":1: bad header");
  std::vector<MetricRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 6) {
      throw ReportError(csv.string() + ":" + std::to_string(number) + ": expected 6 columns");
    }
    MetricRow r;
    r.method = cells[0];
    r.split = cells[1];
    r.k = std::stoul(cells[2]);
    r.accuracy = std::stod(cells[3]);
    r.ci_lo = std::stod(cells[4]);
    r.ci_hi = std::stod(cells[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace genrm::eval
