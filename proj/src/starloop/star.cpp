#include "genrm/starloop/star.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "genrm/common/digest.hpp"
#include "genrm/starloop/trainer.hpp"
#include "json.hpp"

namespace genrm::star {

using ojson = nlohmann::ordered_json;
using world::LayoutMode;

namespace {

constexpr std::uint64_t kSampleTag = 0x73616d70;
constexpr std::uint64_t kPairTag = 0x64706f70;
constexpr std::uint64_t kTrainTag = 0x73746172;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

ojson sample_json(const JudgeSample& s) {
  return ojson{{"rationale", s.rationale},
               {"indicator", std::string(1, world::indicator_char(*s.indicator))},
               {"logprob", s.logprob},
               {"checkpoint", s.checkpoint_id}};
}

}  // namespace

lm::SamplingParams judge_sampling() {
  lm::SamplingParams p;
  p.temperature = 1.0;
  p.top_p = 0.95;
  p.stop_tokens = {Vocab::kIndA, Vocab::kIndB, Vocab::kEos};
  p.max_new_tokens = 16;
  return p;
}

std::vector<std::vector<JudgeSample>> sample_judgments(const lm::Checkpoint& checkpoint,
                                                       std::span<const PreferencePair> pairs,
                                                       std::size_t samples_per_example,
                                                       std::uint64_t seed) {
  const std::string id = checkpoint.id();
  const lm::SamplingParams params = judge_sampling();
  std::vector<std::vector<JudgeSample>> out;
  out.reserve(pairs.size());
  std::vector<std::uint64_t> seeds(samples_per_example);
  for (const auto& pair : pairs) {
    const std::uint64_t pair_seed = mix_seed(seed, pair.pair_id);
    for (std::size_t j = 0; j < samples_per_example; ++j) seeds[j] = mix_seed(pair_seed, j);
    const auto prompt = world::encode_layout(LayoutMode::kCotJudge, pair);
    const auto sequences = lm::sample_batch(checkpoint.model, prompt, seeds, params);
    std::vector<JudgeSample> group;
    group.reserve(sequences.size());
    for (const auto& seq : sequences) {
      JudgeSample s = pref::parse_judgment(seq.tokens, seq.logprob, id);
      if (s.valid()) s.likelihood_a = pref::indicator_probs_from_logits(seq.last_logits).a;
      group.push_back(std::move(s));
    }
    out.push_back(std::move(group));
  }
  return out;
}

std::vector<JudgeSample> star_filter(std::span<const JudgeSample> samples, pref::Indicator gold) {
  std::vector<JudgeSample> out;
  for (const auto& s : samples) {
    if (s.valid() && *s.indicator == gold) out.push_back(s);
  }
  return out;
}

JudgeSample rationalize(RationaleSource source, const lm::Checkpoint* checkpoint,
                        const PreferencePair& pair, std::uint64_t seed) {
  JudgeSample s;
  s.indicator = pair.gold;
  if (source == RationaleSource::kGold) {
    s.rationale = world::gold_rationale(pair.task, pair.y1, pair.y2);
    s.checkpoint_id = "gold";
    return s;
  }
  if (!checkpoint) throw std::invalid_argument("rationalize: checkpoint source without a checkpoint");
  const auto prompt = world::encode_layout(LayoutMode::kRationalizerHint, pair, pair.gold);
  const auto seq = lm::sample_sequence(checkpoint->model, prompt, judge_sampling(), seed);
  s.rationale = seq.tokens;
  if (seq.stopped && !s.rationale.empty()) s.rationale.pop_back();
  s.logprob = seq.logprob;
  s.checkpoint_id = checkpoint->id();
  return s;
}

std::vector<DpoPair> build_dpo_pairs(std::span<const JudgeSample> samples, pref::Indicator gold,
                                     std::size_t max_per_example, std::uint64_t seed) {
  std::vector<const JudgeSample*> correct, incorrect;
  for (const auto& s : samples) {
    if (!s.valid()) continue;
    (*s.indicator == gold ? correct : incorrect).push_back(&s);
  }
  const std::size_t total = correct.size() * incorrect.size();
  const std::size_t take = std::min(total, max_per_example);
  std::vector<std::size_t> cells(total);
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::vector<DpoPair> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, total - 1)(rng);
    std::swap(cells[i], cells[j]);
    const std::size_t cell = cells[i];
    out.emplace_back(*correct[cell / incorrect.size()], *incorrect[cell % incorrect.size()]);
  }
  return out;
}

std::string IterationLog::to_json() const {
  ojson j{{"iteration", iteration},
          {"portion", portion},
          {"pairs", pairs},
          {"samples_drawn", samples_drawn},
          {"invalid", invalid},
          {"retained", retained},
          {"dpo_pairs", dpo_pairs},
          {"rows", rows},
          {"skipped", skipped},
          {"input_checkpoint", input_checkpoint},
          {"reference_checkpoint", reference_checkpoint},
          {"reference_unchanged", reference_unchanged},
          {"checkpoint", checkpoint},
          {"epoch_losses", epoch_losses},
          {"row_pair_ids", row_pair_ids}};
  return j.dump(2);
}

StarResult run_star(const TrainConfig& config, const lm::Checkpoint& base,
                    const world::SplitPlan& plan,
                    const std::optional<std::filesystem::path>& run_dir) {
  config.validate();
  if (!is_iterative(config.method)) {
    throw std::invalid_argument("run_star does not handle " + std::string(to_string(config.method)));
  }
  base.model.require_head(lm::HeadVariant::kLm, "run_star");
  StarResult result{base, {}};
  const std::string method(to_string(config.method));

  for (int it = 1; it <= 3; ++it) {
    const auto& portion = plan.portions[static_cast<std::size_t>(it - 1)];
    const std::uint64_t iter_seed = mix_seed(config.seed, static_cast<std::uint64_t>(it));
    IterationLog log;
    log.iteration = it;
    log.portion = std::string(world::kSplitNames[static_cast<std::size_t>(it - 1)]);
    log.pairs = portion.size();
    log.input_checkpoint = result.final.id();

    std::vector<pref::RationaleExample> sft_rows;
    std::vector<pref::DpoExample> dpo_rows;
    ojson data = ojson::array();
    for (std::size_t i = 0; i < portion.size(); ++i) {
      const auto& pair = portion[i];
      if (pair.split != log.portion) {
        throw std::logic_error("pair " + std::to_string(pair.pair_id) + " from split " + pair.split +
                               " found in portion " + log.portion);
      }
      const auto prefix = world::encode_layout(LayoutMode::kCotJudge, pair);
      std::vector<JudgeSample> group;
      if (config.method == Method::kRationalizerSft) {
        const std::size_t n = config.rationale_source == RationaleSource::kGold
                                  ? 1 : config.samples_per_example;
        for (std::size_t j = 0; j < n; ++j) {
          group.push_back(rationalize(config.rationale_source, &result.final, pair,
                                      mix_seed(mix_seed(iter_seed ^ kSampleTag, pair.pair_id), j)));
        }
      } else {
        group = std::move(sample_judgments(result.final, std::span(&pair, 1),
                                           config.samples_per_example, iter_seed ^ kSampleTag)[0]);
      }
      log.samples_drawn += group.size();
      for (const auto& s : group) log.invalid += s.valid() ? 0 : 1;

      if (config.method == Method::kStarDpo) {
        const auto pairs = build_dpo_pairs(group, pair.gold, config.max_dpo_pairs_per_example,
                                           mix_seed(iter_seed ^ kPairTag, pair.pair_id));
        log.retained += star_filter(group, pair.gold).size();
        for (const auto& [win, lose] : pairs) {
          dpo_rows.push_back({prefix, pref::judgment_tokens(win.rationale, *win.indicator),
                              pref::judgment_tokens(lose.rationale, *lose.indicator), pair.pair_id});
          log.row_pair_ids.push_back(pair.pair_id);
          data.push_back({{"pair_id", pair.pair_id}, {"winning", sample_json(win)},
                          {"losing", sample_json(lose)}});
        }
        log.dpo_pairs += pairs.size();
      } else {
        const auto kept = star_filter(group, pair.gold);
        log.retained += kept.size();
        for (const auto& s : kept) {
          sft_rows.push_back({prefix, s.rationale, *s.indicator, pair.pair_id});
          log.row_pair_ids.push_back(pair.pair_id);
          ojson row = sample_json(s);
          row["pair_id"] = pair.pair_id;
          data.push_back(std::move(row));
        }
      }
    }
    log.rows = config.method == Method::kStarDpo ? dpo_rows.size() : sft_rows.size();

    lm::Checkpoint next{result.final.model, {method, it, config.seed, result.final.id()}};
    if (log.rows == 0) {
      std::cerr << "warning: " << method << " iteration " << it
                << " has no training rows; passing the checkpoint through\n";
      log.skipped = true;
    } else if (config.method == Method::kStarDpo) {
      const lm::Model reference = result.final.model;
      log.reference_checkpoint = lm::Checkpoint{reference, result.final.provenance}.id();
      std::vector<pref::DpoExample> batch;
      auto loss_of = [&](std::span<const std::size_t> rows) {
        batch.clear();
        for (std::size_t r : rows) batch.push_back(dpo_rows[r]);
        return pref::dpo_loss(next.model, reference, batch, config.dpo_beta);
      };
      log.epoch_losses = run_epochs(next.model, dpo_rows.size(), loss_of, config,
                                    config.effective_lr(), iter_seed ^ kTrainTag).epoch_losses;
      log.reference_unchanged = reference.same_parameters(result.final.model);
    } else {
      std::vector<pref::RationaleExample> batch;
      auto loss_of = [&](std::span<const std::size_t> rows) {
        batch.clear();
        for (std::size_t r : rows) batch.push_back(sft_rows[r]);
        return pref::rationalization_loss(next.model, batch);
      };
      log.epoch_losses = run_epochs(next.model, sft_rows.size(), loss_of, config,
                                    config.effective_lr(), iter_seed ^ kTrainTag).epoch_losses;
    }
    lm::round_to_storage_precision(next.model);
    log.checkpoint = next.id();

    if (run_dir) {
      const auto dir = *run_dir / ("iter-" + std::to_string(it));
      for (const char* sub : {"data", "checkpoint", "log"}) std::filesystem::create_directories(dir / sub);
      write_text(dir / "data" / "rows.json", data.dump(1) + "\n");
      lm::save_checkpoint(next, dir / "checkpoint" / "model.pglb");
      write_text(dir / "log" / "iteration.json", log.to_json() + "\n");
    }
    result.final = std::move(next);
    result.logs.push_back(std::move(log));
  }
  return result;
}

}  // namespace genrm::star
