#include "genrm/cli/pipeline.hpp"

#include <chrono>
#include <fstream>

#include "genrm/common/digest.hpp"
#include "genrm/starloop/star.hpp"
#include "genrm/starloop/trainer.hpp"
#include "json.hpp"

namespace genrm::cli {

using ojson = nlohmann::ordered_json;
using star::Method;

namespace {

class Progress {
 public:
  explicit Progress(std::ostream* out) : out_(out), start_(std::chrono::steady_clock::now()) {}
  void operator()(const std::string& what) const {
    if (!out_) return;
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    *out_ << "[" << static_cast<long>(t) << "s] " << what << std::endl;
  }

 private:
  std::ostream* out_;
  std::chrono::steady_clock::time_point start_;
};

void write_json(const std::filesystem::path& path, const ojson& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

std::unique_ptr<eval::Judge> judge_for(const RunConfig& config, const lm::Checkpoint& checkpoint,
                                       bool chain_of_thought) {
  switch (checkpoint.model.config().head) {
    case lm::HeadVariant::kBtReward: return eval::reward_judge(checkpoint);
    case lm::HeadVariant::kPairReward: return eval::pair_judge(checkpoint);
    case lm::HeadVariant::kLm: break;
  }
  return chain_of_thought ? eval::cot_judge(checkpoint, config.vote_probability)
                          : eval::direct_judge(checkpoint);
}

}  // namespace

std::string split_label(std::string_view split) {
  if (split == "eval_id") return "ID";
  if (split == "eval_ood") return "OOD";
  return std::string(split);
}

std::string stamp_json(const RunConfig& config, std::uint64_t seed) {
  return ojson{{"config_digest", config.digest()}, {"seed", seed}, {"version", kVersion}}.dump();
}

eval::MetricsReport evaluate_checkpoint(const RunConfig& config, const std::string& label,
                                        const lm::Checkpoint& checkpoint, bool chain_of_thought,
                                        const world::SplitPlan& plan,
                                        const std::vector<std::string>& splits, std::uint64_t seed) {
  const auto judge = judge_for(config, checkpoint, chain_of_thought);
  eval::MetricsReport report;
  report.config_digest = config.digest();
  report.seeds = {seed};
  report.version = std::string(kVersion);
  eval::EvalOptions options{config.k_max, mix_seed(seed, 0x6576616c), config.debias};
  for (const auto& split : splits) {
    const auto& pairs = plan.split(split);
    auto result = eval::evaluate(*judge, label, split_label(split), pairs, options);
    result.stats.flip_rate =
        eval::position_swap_consistency(*judge, pairs, mix_seed(seed, 0x666c6970)).rate;
    report.rows.insert(report.rows.end(), result.rows.begin(), result.rows.end());
    report.methods.push_back(result.stats);
  }
  report.normalize();
  return report;
}

void merge_into(eval::MetricsReport& into, const eval::MetricsReport& from) {
  into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
  into.methods.insert(into.methods.end(), from.methods.begin(), from.methods.end());
  for (auto s : from.seeds) {
    if (std::find(into.seeds.begin(), into.seeds.end(), s) == into.seeds.end()) into.seeds.push_back(s);
  }
  if (into.config_digest.empty()) into.config_digest = from.config_digest;
  if (into.version.empty()) into.version = from.version;
  into.normalize();
}

ReplicateResult replicate(const RunConfig& config, std::uint64_t seed,
                          const std::filesystem::path& out, std::ostream* progress) {
  const Progress log(progress);
  const std::vector<std::string> splits{"eval_id", "eval_ood"};
  std::filesystem::create_directories(out / "checkpoints");

  const world::SplitPlan plan = world::build_splits(config.world, seed);
  world::write_splits(plan, out / "data", stamp_json(config, seed));
  std::vector<world::PreferencePair> train;
  for (const auto& portion : plan.portions) train.insert(train.end(), portion.begin(), portion.end());
  log("data written to " + (out / "data").string());

  ReplicateResult result;
  result.report.config_digest = config.digest();
  result.report.version = std::string(kVersion);
  result.report.seeds = {seed};
  auto record = [&](const std::string& label, const lm::Checkpoint& checkpoint, bool cot) {
    lm::save_checkpoint(checkpoint, out / "checkpoints" / (label + ".pglb"));
    result.checkpoint_digests[label] = checkpoint.digest();
    merge_into(result.report, evaluate_checkpoint(config, label, checkpoint, cot, plan, splits, seed));
    log(label + " evaluated");
  };

  std::optional<lm::Checkpoint> genrm;
  for (Method m : {Method::kBtRm, Method::kPairRm, Method::kGenRm}) {
    star::TrainConfig tc = config.train;
    tc.method = m;
    tc.epochs = config.baseline_epochs;
    tc.seed = seed;
    const auto start = star::initial_checkpoint(config.model, m, seed);
    auto trained = star::train_baseline(tc, start, train);
    log(std::string(star::to_string(m)) + " trained");
    record(std::string(star::to_string(m)), trained, false);
    if (m == Method::kGenRm) genrm = std::move(trained);
  }

  const auto untrained = star::initial_checkpoint(config.model, Method::kStarSft, seed);
  record(std::string(kZeroShotLabel), untrained, true);

  const lm::Checkpoint& base = config.star_base == StarBase::kGenRm ? *genrm : untrained;
  for (Method m : {Method::kStarSft, Method::kStarDpo, Method::kRationalizerSft}) {
    star::TrainConfig tc = config.train;
    tc.method = m;
    tc.seed = seed;
    const std::string label(star::to_string(m));
    auto run = star::run_star(tc, base, plan, out / "star" / label);
    log(label + " trained");
    record(label, run.final, true);
  }

  ojson digests = ojson::object();
  for (const auto& [label, digest] : result.checkpoint_digests) digests[label] = digest;
  write_json(out / "checkpoints" / "digests.json",
             {{"stamp", ojson::parse(stamp_json(config, seed))}, {"digests", digests}});
  eval::emit_report(result.report, out / "report");
  log("report written to " + (out / "report").string());
  return result;
}

}  // namespace genrm::cli
