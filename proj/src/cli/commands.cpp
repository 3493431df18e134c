#include "genrm/cli/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <tuple>

#include "CLI11.hpp"
#include "genrm/cli/config.hpp"
#include "genrm/cli/pipeline.hpp"
#include "genrm/common/digest.hpp"
#include "genrm/starloop/star.hpp"
#include "genrm/starloop/trainer.hpp"

namespace genrm::cli {

namespace fs = std::filesystem;
using star::Method;

namespace {

// Shared flags of every command.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App& cmd, Common& c) {
  cmd.add_option("--config", c.config_path, "key = value config file (defaults when omitted)");
  cmd.add_option("--seed", c.seed, "master seed, overrides the config");
}

RunConfig load(const Common& c) {
  RunConfig config = c.config_path.empty() ? parse_config_text("", "<defaults>")
                                           : parse_config(c.config_path);
  if (c.seed) config.seed = *c.seed;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) config.output_root = root;
  return config;
}

fs::path run_dir(const RunConfig& config) {
  return config.output_root / ("seed-" + std::to_string(config.seed));
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

void write_config(const RunConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.txt", std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + (dir / "config.txt").string());
  out << config.normalized();
}

world::SplitPlan load_data(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw std::ios_base::failure("no dataset at " + dir.string() + " (run gen-data first)");
  }
  return world::read_splits(dir);
}

lm::Checkpoint load_existing(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw std::ios_base::failure("checkpoint not found: " + path.string());
  return lm::load_checkpoint(path);
}

Method method_in(const std::string& name, std::initializer_list<Method> allowed) {
  const Method m = star::parse_method(name);
  for (Method a : allowed) {
    if (a == m) return m;
  }
  throw std::invalid_argument("method " + name + " is not valid for this command");
}

void print_report(const eval::MetricsReport& report, std::ostream& out) {
  out << std::left << std::setw(22) << "method" << std::setw(6) << "split" << std::setw(5) << "K"
      << "accuracy  95% CI\n";
  for (const auto& r : report.rows) {
    out << std::setw(22) << r.method << std::setw(6) << r.split << std::setw(5) << r.k
        << eval::format_fixed(r.accuracy) << "  [" << eval::format_fixed(r.ci_lo) << ", "
        << eval::format_fixed(r.ci_hi) << "]\n";
  }
  for (const auto& m : report.methods) {
    out << std::setw(22) << m.method << std::setw(6) << m.split
        << "invalid " << eval::format_fixed(m.invalid_rate) << "  flip "
        << (m.flip_rate ? eval::format_fixed(*m.flip_rate) : std::string("-")) << '\n';
  }
}

int gen_data(const Common& c, const std::string& out_dir, std::ostream& out) {
  const RunConfig config = load(c);
  const fs::path dir = or_default(out_dir, run_dir(config) / "data");
  const auto plan = world::build_splits(config.world, config.seed);
  for (const auto& e : world::write_splits(plan, dir, stamp_json(config, config.seed))) {
    out << e.name << ' ' << e.records << ' ' << e.sha256 << '\n';
  }
  return kOk;
}

int train(const Common& c, const std::string& method, const std::string& data,
          const std::string& out_path, std::ostream& out) {
  const RunConfig config = load(c);
  const Method m = method_in(method, {Method::kBtRm, Method::kPairRm, Method::kGenRm});
  const auto plan = load_data(or_default(data, run_dir(config) / "data"));
  std::vector<world::PreferencePair> pairs;
  for (const auto& portion : plan.portions) pairs.insert(pairs.end(), portion.begin(), portion.end());
  star::TrainConfig tc = config.train;
  tc.method = m;
  tc.epochs = config.baseline_epochs;
  tc.seed = config.seed;
  star::TrainStats stats;
  const auto ckpt = star::train_baseline(tc, star::initial_checkpoint(config.model, m, config.seed),
                                         pairs, &stats);
  const fs::path path = or_default(out_path, run_dir(config) / "checkpoints" / (method + ".pglb"));
  fs::create_directories(path.parent_path());
  lm::save_checkpoint(ckpt, path);
  for (std::size_t e = 0; e < stats.epoch_losses.size(); ++e) {
    out << "epoch " << e + 1 << " loss " << eval::format_fixed(stats.epoch_losses[e]) << '\n';
  }
  out << path.string() << ' ' << ckpt.digest() << '\n';
  return kOk;
}

int run_star_cmd(const Common& c, const std::string& method, const std::string& data,
                 const std::string& base_path, const std::string& out_dir, std::ostream& out) {
  const RunConfig config = load(c);
  const Method m =
      method_in(method, {Method::kStarSft, Method::kStarDpo, Method::kRationalizerSft});
  const auto plan = load_data(or_default(data, run_dir(config) / "data"));
  const auto base = base_path.empty() ? star::initial_checkpoint(config.model, m, config.seed)
                                      : load_existing(base_path);
  star::TrainConfig tc = config.train;
  tc.method = m;
  tc.seed = config.seed;
  const fs::path dir = or_default(out_dir, run_dir(config) / "star" / method);
  const auto result = star::run_star(tc, base, plan, dir);
  lm::save_checkpoint(result.final, dir / "final.pglb");
  for (const auto& log : result.logs) {
    out << "iteration " << log.iteration << ' ' << log.portion << " retained " << log.retained
        << " rows " << log.rows << (log.skipped ? " skipped" : "") << '\n';
  }
  out << (dir / "final.pglb").string() << ' ' << result.final.digest() << '\n';
  return kOk;
}

int eval_cmd(const Common& c, const std::string& checkpoint, const std::string& label_in,
             const std::string& mode, const std::vector<std::string>& splits, const std::string& data,
             const std::string& out_dir, std::ostream& out) {
  const RunConfig config = load(c);
  const auto ckpt = load_existing(checkpoint);
  const auto plan = load_data(or_default(data, run_dir(config) / "data"));
  std::string label = label_in;
  if (label.empty()) {
    label = ckpt.provenance.method == "INIT" ? std::string(kZeroShotLabel) : ckpt.provenance.method;
  }
  bool cot = ckpt.provenance.method != "GENRM";
  if (mode == "cot") cot = true;
  if (mode == "direct") cot = false;
  for (const auto& s : splits) plan.split(s);  // rejects unknown names before any work
  const auto report = evaluate_checkpoint(config, label, ckpt, cot, plan, splits, config.seed);
  eval::emit_report(report, or_default(out_dir, run_dir(config) / "eval" / label));
  print_report(report, out);
  return kOk;
}

int report_cmd(const std::vector<std::string>& inputs, const std::string& out_dir, std::ostream& out) {
  std::vector<eval::MetricsReport> reports;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p = fs::exists(p / "report" / "report.json") ? p / "report" / "report.json"
                                                                        : p / "report.json";
    reports.push_back(eval::read_report(p));
  }
  const auto pooled = aggregate_reports(reports);
  if (!out_dir.empty()) eval::emit_report(pooled, out_dir);
  print_report(pooled, out);
  return kOk;
}

int replicate_cmd(const Common& c, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const RunConfig config = load(c);
  const fs::path dir = or_default(out_dir, run_dir(config));
  write_config(config, dir);
  const auto result = replicate(config, config.seed, dir, &err);
  print_report(result.report, out);
  for (const auto& [label, digest] : result.checkpoint_digests) out << label << ' ' << digest << '\n';
  return kOk;
}

}  // namespace

eval::MetricsReport aggregate_reports(std::span<const eval::MetricsReport> reports) {
  if (reports.empty()) throw std::invalid_argument("no reports to aggregate");
  eval::MetricsReport pooled;
  pooled.version = reports.front().version;
  std::vector<std::string> digests;
  std::map<std::tuple<std::string, std::string, std::size_t>, eval::MetricRow> rows;
  std::map<std::pair<std::string, std::string>, std::pair<eval::MethodStats, std::size_t>> stats;
  for (const auto& r : reports) {
    digests.push_back(r.config_digest);
    pooled.seeds.insert(pooled.seeds.end(), r.seeds.begin(), r.seeds.end());
    for (const auto& row : r.rows) {
      auto& acc = rows[{row.method, row.split, row.k}];
      acc.method = row.method;
      acc.split = row.split;
      acc.k = row.k;
      acc.correct += row.correct;
      acc.total += row.total;
    }
    for (const auto& m : r.methods) {
      auto& [acc, flips] = stats[{m.method, m.split}];
      acc.method = m.method;
      acc.split = m.split;
      acc.samples += m.samples;
      acc.invalid += m.invalid;
      if (m.flip_rate) {
        acc.flip_rate = acc.flip_rate.value_or(0.0) + *m.flip_rate;
        ++flips;
      }
    }
  }
  for (auto& [key, row] : rows) {
    row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.total);
    std::tie(row.ci_lo, row.ci_hi) = eval::wilson_ci(row.correct, row.total);
    pooled.rows.push_back(row);
  }
  for (auto& [key, entry] : stats) {
    auto& [m, flips] = entry;
    m.invalid_rate = m.samples == 0 ? 0.0 : static_cast<double>(m.invalid) / static_cast<double>(m.samples);
    if (m.flip_rate) *m.flip_rate /= static_cast<double>(flips);
    pooled.methods.push_back(m);
  }
  std::sort(digests.begin(), digests.end());
  digests.erase(std::unique(digests.begin(), digests.end()), digests.end());
  if (digests.size() == 1) {
    pooled.config_digest = digests.front();
  } else {
    std::string joined;
    for (const auto& d : digests) joined += d + "\n";
    pooled.config_digest = sha256_hex(joined);
  }
  pooled.normalize();
  return pooled;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generative reward model experiments on a synthetic preference world", "genrm"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common common;
  std::string out_dir, data, method, checkpoint, label, mode = "auto", base;
  std::vector<std::string> splits{"eval_id", "eval_ood"};
  std::vector<std::string> inputs;

  auto* gen = app.add_subcommand("gen-data", "generate and write the five splits");
  add_common(*gen, common);
  gen->add_option("--out", out_dir, "dataset directory");

  auto* tr = app.add_subcommand("train", "train a baseline judge (BT-RM, PAIR-RM, GENRM)");
  add_common(*tr, common);
  tr->add_option("--method", method, "method name")->required();
  tr->add_option("--data", data, "dataset directory");
  tr->add_option("--out", out_dir, "checkpoint path");

  auto* st = app.add_subcommand("star", "iterative training (STAR-SFT, STAR-DPO, RATIONALIZER-SFT)");
  add_common(*st, common);
  st->add_option("--method", method, "method name")->required();
  st->add_option("--data", data, "dataset directory");
  st->add_option("--base", base, "starting checkpoint (untrained model when omitted)");
  st->add_option("--out", out_dir, "run directory");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write a report");
  add_common(*ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  ev->add_option("--label", label, "method label in the report");
  ev->add_option("--mode", mode, "LM judges: cot, direct or auto")
      ->check(CLI::IsMember({"auto", "cot", "direct"}));
  ev->add_option("--splits", splits, "evaluation splits")->delimiter(',');
  ev->add_option("--data", data, "dataset directory");
  ev->add_option("--out", out_dir, "report directory");

  auto* rp = app.add_subcommand("report", "pool reports from several runs");
  rp->add_option("--in", inputs, "report.json files or run directories")->required();
  rp->add_option("--out", out_dir, "pooled report directory");

  auto* rep = app.add_subcommand("replicate", "every method on every split for one seed");
  add_common(*rep, common);
  rep->add_option("--out", out_dir, "run directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return gen_data(common, out_dir, out);
    if (tr->parsed()) return train(common, method, data, out_dir, out);
    if (st->parsed()) return run_star_cmd(common, method, data, base, out_dir, out);
    if (ev->parsed()) return eval_cmd(common, checkpoint, label, mode, splits, data, out_dir, out);
    if (rp->parsed()) return report_cmd(inputs, out_dir, out);
    if (rep->parsed()) return replicate_cmd(common, out_dir, out, err);
  } catch (const std::ios_base::failure& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const eval::ReportError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const lm::CheckpointFormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const world::DatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInvariant;
  }
  return kUsage;
}

}  // namespace genrm::cli
