#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "genrm/ndtensor/ops.hpp"
#include "genrm/starloop/star.hpp"
#include "genrm/starloop/trainer.hpp"
#include "genrm/synthworld/layout.hpp"
#include "json.hpp"
#include "support/pairs.hpp"

namespace genrm::star {
namespace {

namespace fs = std::filesystem;
using genrm::testing::random_pairs;
using pref::Indicator;

lm::ModelConfig small_model() {
  lm::ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.embed_dim = 16;
  c.mlp_dim = 32;
  c.context_length = 64;
  return c;
}

world::WorldConfig small_world() {
  world::WorldConfig w;
  w.train_size = 36;
  w.eval_id_size = 10;
  w.eval_ood_size = 10;
  w.max_response_length = 4;
  return w;
}

TrainConfig config_for(Method m, std::uint64_t seed = 3) {
  TrainConfig c;
  c.method = m;
  c.seed = seed;
  c.epochs = 2;
  c.batch_size = 8;
  return c;
}

JudgeSample sample(std::optional<Indicator> ind, double logprob = -1.0, Token tag = 30) {
  JudgeSample s;
  s.indicator = ind;
  s.logprob = logprob;
  s.rationale = {Vocab::kScore, tag};
  return s;
}

TEST(StarloopTest, MethodNamesAndHeads) {
  for (Method m : {Method::kBtRm, Method::kPairRm, Method::kGenRm, Method::kStarSft,
                   Method::kStarDpo, Method::kRationalizerSft}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
    EXPECT_NE(is_baseline(m), is_iterative(m));
  }
  EXPECT_EQ(head_for(Method::kBtRm), lm::HeadVariant::kBtReward);
  EXPECT_EQ(head_for(Method::kPairRm), lm::HeadVariant::kPairReward);
  EXPECT_EQ(head_for(Method::kStarDpo), lm::HeadVariant::kLm);
  EXPECT_THROW(parse_method("PPO"), std::invalid_argument);
}

TEST(StarloopTest, ConfigValidation) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  auto c = TrainConfig{};
  c.lr = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.dpo_beta = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.method = Method::kRationalizerSft;
  EXPECT_DOUBLE_EQ(c.effective_lr(), 20 * c.lr);
  c.method = Method::kStarSft;
  EXPECT_DOUBLE_EQ(c.effective_lr(), c.lr);
}

TEST(StarloopTest, ZeroEpochsReturnsStartParameters) {
  const auto start = initial_checkpoint(small_model(), Method::kBtRm, 4);
  auto c = config_for(Method::kBtRm);
  c.epochs = 0;
  const auto out = train_baseline(c, start, random_pairs(8, 4));
  EXPECT_TRUE(out.model.same_parameters(start.model));
  EXPECT_EQ(out.provenance.parent_id, start.id());
}

TEST(StarloopTest, BaselineProvenanceChains) {
  const auto start = initial_checkpoint(small_model(), Method::kGenRm, 5);
  EXPECT_EQ(start.provenance.method, "INIT");
  EXPECT_EQ(start.model.config().head, lm::HeadVariant::kLm);
  const auto out = train_baseline(config_for(Method::kGenRm, 5), start, random_pairs(8, 5));
  EXPECT_EQ(out.provenance.method, "GENRM");
  EXPECT_EQ(out.provenance.iteration, 0);
  EXPECT_EQ(out.provenance.seed, 5u);
  EXPECT_EQ(out.provenance.parent_id, start.id());
  EXPECT_FALSE(out.model.same_parameters(start.model));
}

TEST(StarloopTest, BaselineRejectsWrongMethodOrHead) {
  const auto start = initial_checkpoint(small_model(), Method::kGenRm, 1);
  EXPECT_THROW(train_baseline(config_for(Method::kStarSft), start, random_pairs(4, 1)),
               std::invalid_argument);
  EXPECT_THROW(train_baseline(config_for(Method::kBtRm), start, random_pairs(4, 1)),
               lm::WrongHeadVariant);
}

TEST(StarloopTest, BtTrainingOverfitsThirtyTwoPairs) {
  lm::ModelConfig mc;  // default trunk
  const auto start = initial_checkpoint(mc, Method::kBtRm, 6);
  const auto pairs = random_pairs(32, 6, 6);
  auto c = config_for(Method::kBtRm, 6);
  c.batch_size = 16;
  c.epochs = 150;  // 300 steps
  c.schedule = nd::Schedule::kConstant;
  TrainStats stats;
  const auto out = train_baseline(c, start, pairs, &stats);
  EXPECT_EQ(stats.steps, 300u);
  nd::NoGradGuard guard;
  EXPECT_LT(pref::bt_loss(out.model, pairs).item(), 0.1);
}

TEST(StarloopTest, SameSeedSameDigest) {
  const auto pairs = random_pairs(12, 7);
  for (Method m : {Method::kBtRm, Method::kPairRm, Method::kGenRm}) {
    const auto start = initial_checkpoint(small_model(), m, 7);
    EXPECT_EQ(start.digest(), initial_checkpoint(small_model(), m, 7).digest());
    const auto a = train_baseline(config_for(m, 7), start, pairs);
    const auto b = train_baseline(config_for(m, 7), start, pairs);
    EXPECT_EQ(a.digest(), b.digest()) << to_string(m);
    const auto c = train_baseline(config_for(m, 8), start, pairs);
    EXPECT_NE(a.digest(), c.digest()) << to_string(m);
  }
}

TEST(StarloopTest, NonFiniteLossAbortsWithLastGoodModel) {
  lm::Model model = initial_checkpoint(small_model(), Method::kGenRm, 9).model;
  const lm::Model before = model;
  auto loss_of = [](std::span<const std::size_t>) { return nd::Tensor::scalar(std::nan("")); };
  try {
    run_epochs(model, 4, loss_of, config_for(Method::kGenRm), 1e-3, 1);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_TRUE(e.last_good.model.same_parameters(before));
  }
}

TEST(StarloopTest, JudgeSamplingParameters) {
  const auto p = judge_sampling();
  EXPECT_EQ(p.temperature, 1.0);
  EXPECT_EQ(p.top_p, 0.95);
}

TEST(StarloopTest, UntrainedJudgmentsAreSometimesValid) {
  const auto ckpt = initial_checkpoint(small_model(), Method::kStarSft, 10);
  const auto pairs = random_pairs(20, 10);
  const auto groups = sample_judgments(ckpt, pairs, 4, 10);
  ASSERT_EQ(groups.size(), pairs.size());
  std::size_t invalid = 0, total = 0;
  for (const auto& g : groups) {
    ASSERT_EQ(g.size(), 4u);
    for (const auto& s : g) {
      EXPECT_EQ(s.checkpoint_id, ckpt.id());
      EXPECT_TRUE(std::isfinite(s.logprob));
      invalid += s.valid() ? 0 : 1;
      ++total;
    }
  }
  EXPECT_LT(invalid, total);
  const auto again = sample_judgments(ckpt, pairs, 4, 10);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(again[i][j].rationale, groups[i][j].rationale);
      EXPECT_EQ(again[i][j].indicator, groups[i][j].indicator);
    }
  }
}

// Independent predicate for the filter, written as a plain scan.
std::size_t count_correct(const std::vector<JudgeSample>& s, Indicator gold) {
  std::size_t n = 0;
  for (const auto& x : s) {
    if (x.indicator.has_value() && *x.indicator == gold) ++n;
  }
  return n;
}

TEST(StarloopTest, FilterKeepsExactlyValidCorrectSamplesInOrder) {
  const std::vector<JudgeSample> mixed{sample(Indicator::kA, -1, 30), sample(std::nullopt, -1, 31),
                                       sample(Indicator::kB, -1, 32), sample(Indicator::kA, -2, 33),
                                       sample(std::nullopt, -1, 34), sample(Indicator::kB, -3, 35)};
  const auto kept = star_filter(mixed, Indicator::kA);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].rationale[1], 30);
  EXPECT_EQ(kept[1].rationale[1], 33);
  const auto kept_b = star_filter(mixed, Indicator::kB);
  ASSERT_EQ(kept_b.size(), 2u);
  EXPECT_EQ(kept_b[0].rationale[1], 32);
  EXPECT_EQ(kept_b[1].rationale[1], 35);
  EXPECT_TRUE(star_filter(std::vector<JudgeSample>{sample(std::nullopt)}, Indicator::kA).empty());

  const auto ckpt = initial_checkpoint(small_model(), Method::kStarSft, 11);
  const auto pairs = random_pairs(30, 11);
  const auto groups = sample_judgments(ckpt, pairs, 4, 11);
  std::size_t kept_total = 0, scanned = 0, dropped = 0, valid = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto k = star_filter(groups[i], pairs[i].gold);
    for (const auto& s : k) EXPECT_EQ(*s.indicator, pairs[i].gold);
    kept_total += k.size();
    scanned += count_correct(groups[i], pairs[i].gold);
    for (const auto& s : groups[i]) {
      valid += s.valid();
      dropped += s.valid() && *s.indicator != pairs[i].gold;
    }
  }
  EXPECT_EQ(kept_total, scanned);
  EXPECT_EQ(kept_total + dropped, valid);
}

TEST(StarloopTest, GoldRationalizerUsesGoldRationale) {
  for (const auto& p : random_pairs(20, 12)) {
    const auto s = rationalize(RationaleSource::kGold, nullptr, p, 1);
    EXPECT_EQ(s.rationale, world::gold_rationale(p.task, p.y1, p.y2));
    EXPECT_EQ(s.indicator, p.gold);
  }
}

TEST(StarloopTest, CheckpointRationalizerForcesGoldIndicator) {
  const auto ckpt = initial_checkpoint(small_model(), Method::kRationalizerSft, 13);
  for (const auto& p : random_pairs(20, 13)) {
    const auto s = rationalize(RationaleSource::kCheckpoint, &ckpt, p, p.pair_id);
    EXPECT_EQ(s.indicator, p.gold);
    for (Token t : s.rationale) EXPECT_FALSE(Vocab::is_indicator(t) || t == Vocab::kEos);
  }
  EXPECT_ANY_THROW(rationalize(RationaleSource::kCheckpoint, nullptr, random_pairs(1, 13)[0], 1));
}

TEST(StarloopTest, DpoPairCounts) {
  const std::vector<JudgeSample> one_each{sample(Indicator::kA, -1, 30), sample(Indicator::kB, -1, 31)};
  const auto p = build_dpo_pairs(one_each, Indicator::kA, 1, 1);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].first.rationale[1], 30);
  EXPECT_EQ(p[0].second.rationale[1], 31);
  const std::vector<JudgeSample> all_right{sample(Indicator::kA), sample(Indicator::kA),
                                           sample(std::nullopt)};
  EXPECT_TRUE(build_dpo_pairs(all_right, Indicator::kA, 4, 1).empty());
  const std::vector<JudgeSample> only_invalid_losers{sample(Indicator::kB), sample(std::nullopt)};
  EXPECT_EQ(build_dpo_pairs(only_invalid_losers, Indicator::kB, 4, 1).size(), 0u);
}

TEST(StarloopTest, DpoPairsSampleTheCrossProductWithoutReplacement) {
  std::vector<JudgeSample> s;
  for (Token t = 30; t < 33; ++t) s.push_back(sample(Indicator::kB, -1, t));  // correct
  for (Token t = 40; t < 42; ++t) s.push_back(sample(Indicator::kA, -1, t));  // incorrect
  s.push_back(sample(std::nullopt, -1, 50));
  std::set<std::pair<Token, Token>> cross;
  for (Token w = 30; w < 33; ++w) {
    for (Token l = 40; l < 42; ++l) cross.insert({w, l});
  }
  std::set<std::pair<Token, Token>> seen_overall;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto pairs = build_dpo_pairs(s, Indicator::kB, 2, seed);
    ASSERT_EQ(pairs.size(), 2u);
    std::set<std::pair<Token, Token>> got;
    for (const auto& [w, l] : pairs) {
      EXPECT_EQ(*w.indicator, Indicator::kB);
      EXPECT_EQ(*l.indicator, Indicator::kA);
      got.insert({w.rationale[1], l.rationale[1]});
    }
    EXPECT_EQ(got.size(), 2u);
    for (const auto& g : got) EXPECT_TRUE(cross.count(g));
    seen_overall.insert(got.begin(), got.end());
    const auto again = build_dpo_pairs(s, Indicator::kB, 2, seed);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_EQ(again[i].first.rationale, pairs[i].first.rationale);
      EXPECT_EQ(again[i].second.rationale, pairs[i].second.rationale);
    }
  }
  EXPECT_EQ(seen_overall, cross);
  EXPECT_EQ(build_dpo_pairs(s, Indicator::kB, 100, 3).size(), 6u);
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

void check_protocol(Method m) {
  const auto plan = world::build_splits(small_world(), 14);
  const auto base = initial_checkpoint(small_model(), m, 14);
  const auto dir = fs::temp_directory_path() / ("genrm_star_" + std::string(to_string(m)));
  fs::remove_all(dir);
  const auto result = run_star(config_for(m, 14), base, plan, dir);
  ASSERT_EQ(result.logs.size(), 3u);
  std::string entering = base.id();
  std::set<std::uint64_t> used;
  for (int i = 0; i < 3; ++i) {
    const auto& log = result.logs[i];
    EXPECT_EQ(log.iteration, i + 1);
    EXPECT_EQ(log.portion, world::kSplitNames[i]);
    EXPECT_EQ(log.input_checkpoint, entering);
    EXPECT_TRUE(log.reference_unchanged);
    if (m == Method::kStarDpo && !log.skipped) EXPECT_EQ(log.reference_checkpoint, entering);
    std::set<std::uint64_t> portion_ids;
    for (const auto& p : plan.portions[i]) portion_ids.insert(p.pair_id);
    for (auto id : log.row_pair_ids) {
      EXPECT_TRUE(portion_ids.count(id)) << "row from outside portion " << i + 1;
      used.insert(id);
    }
    EXPECT_EQ(log.rows, log.row_pair_ids.size());
    const auto iter = dir / ("iter-" + std::to_string(i + 1));
    const auto logged = read_json(iter / "log" / "iteration.json");
    EXPECT_EQ(logged["portion"], world::kSplitNames[i]);
    const auto ck = lm::load_checkpoint(iter / "checkpoint" / "model.pglb");
    EXPECT_EQ(ck.id(), log.checkpoint);
    EXPECT_EQ(ck.provenance.parent_id, entering);
    EXPECT_EQ(ck.provenance.iteration, i + 1);
    const auto rows = read_json(iter / "data" / "rows.json");
    EXPECT_EQ(rows.size(), log.rows);
    for (const auto& row : rows) {
      const auto id = row["pair_id"].get<std::uint64_t>();
      const auto& pair = *std::find_if(plan.portions[i].begin(), plan.portions[i].end(),
                                       [&](const auto& p) { return p.pair_id == id; });
      const std::string gold(1, world::indicator_char(pair.gold));
      if (m == Method::kStarDpo) {
        EXPECT_EQ(row["winning"]["indicator"], gold);
        EXPECT_NE(row["losing"]["indicator"], gold);
      } else {
        EXPECT_EQ(row["indicator"], gold);
      }
    }
    entering = log.checkpoint;
  }
  EXPECT_EQ(result.final.id(), entering);
  fs::remove_all(dir);

  const auto again = run_star(config_for(m, 14), base, plan);
  EXPECT_EQ(again.final.digest(), result.final.digest());
}

TEST(StarloopTest, StarSftProtocol) { check_protocol(Method::kStarSft); }
TEST(StarloopTest, StarDpoProtocol) { check_protocol(Method::kStarDpo); }
TEST(StarloopTest, RationalizerProtocol) { check_protocol(Method::kRationalizerSft); }

TEST(StarloopTest, RationalizerRowsAreOnePerPair) {
  const auto plan = world::build_splits(small_world(), 15);
  const auto base = initial_checkpoint(small_model(), Method::kRationalizerSft, 15);
  const auto result = run_star(config_for(Method::kRationalizerSft, 15), base, plan);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(result.logs[i].rows, plan.portions[i].size());
}

TEST(StarloopTest, PortionTagMismatchIsRejected) {
  auto plan = world::build_splits(small_world(), 16);
  plan.portions[1][0].split = "train_p1";
  const auto base = initial_checkpoint(small_model(), Method::kStarSft, 16);
  EXPECT_THROW(run_star(config_for(Method::kStarSft, 16), base, plan), std::logic_error);
}

TEST(StarloopTest, EmptyIterationPassesThrough) {
  auto plan = world::build_splits(small_world(), 17);
  plan.portions[0].clear();
  const auto base = initial_checkpoint(small_model(), Method::kStarSft, 17);
  const auto result = run_star(config_for(Method::kStarSft, 17), base, plan);
  EXPECT_TRUE(result.logs[0].skipped);
  EXPECT_EQ(result.logs[0].rows, 0u);
  EXPECT_EQ(result.logs[1].input_checkpoint, result.logs[0].checkpoint);
}

TEST(StarloopTest, RunStarRejectsBaselineMethods) {
  const auto plan = world::build_splits(small_world(), 18);
  const auto base = initial_checkpoint(small_model(), Method::kGenRm, 18);
  EXPECT_THROW(run_star(config_for(Method::kGenRm), base, plan), std::invalid_argument);
}

}  // namespace
}  // namespace genrm::star
