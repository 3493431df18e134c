#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "genrm/common/digest.hpp"
#include "genrm/evalkit/evaluate.hpp"
#include "genrm/lm/sampler.hpp"
#include "genrm/lm/scoring.hpp"
#include "genrm/starloop/star.hpp"
#include "genrm/synthworld/layout.hpp"
#include "genrm/synthworld/splits.hpp"
#include "support/models.hpp"

namespace genrm::eval {
namespace {

namespace fs = std::filesystem;
using genrm::testing::randomized;
using lm::HeadVariant;

world::SplitPlan plan(std::uint64_t seed, std::size_t eval = 500) {
  world::WorldConfig w;
  w.train_size = 3;
  w.eval_id_size = eval;
  w.eval_ood_size = eval;
  w.max_response_length = 4;
  return world::build_splits(w, seed);
}

lm::ModelConfig small(HeadVariant head) {
  auto c = genrm::testing::tiny_config(head, 64);
  c.context_length = 64;
  return c;
}

lm::Checkpoint checkpoint_of(lm::Model m) { return {std::move(m), {"TEST", 0, 0, ""}}; }

// The oracle, exposed as if it were a sampled judge so every K is exercised.
class SampledOracle final : public Judge {
 public:
  bool sampled() const override { return true; }
  JudgeOutcome judge(const PairView& p, std::span<const std::size_t> ks,
                     std::uint64_t seed) const override {
    auto out = inner_->judge(p, ks, seed);
    out.samples = ks.back();
    return out;
  }

 private:
  std::unique_ptr<Judge> inner_ = oracle_judge();
};

TEST(EvalkitTest, WilsonExamples) {
  const auto [lo, hi] = wilson_ci(50, 100);
  EXPECT_NEAR(lo, 0.40383, 1e-4);
  EXPECT_NEAR(hi, 0.59617, 1e-4);
  EXPECT_EQ(wilson_ci(0, 37).first, 0.0);
  EXPECT_EQ(wilson_ci(37, 37).second, 1.0);
  EXPECT_THROW(wilson_ci(0, 0), std::invalid_argument);
  EXPECT_THROW(wilson_ci(5, 4), std::invalid_argument);
}

TEST(EvalkitTest, WilsonMatchesLongDoubleFormula) {
  const long double z = 1.959964L;
  for (std::size_t n : {10u, 100u, 500u, 1000u}) {
    for (std::size_t c = 1; c < n; c += n / 10 + 1) {
      const long double p = static_cast<long double>(c) / n;
      const long double den = 1 + z * z / n;
      const long double mid = (p + z * z / (2 * n)) / den;
      const long double half = z * std::sqrt(p * (1 - p) / n + z * z / (4.0L * n * n)) / den;
      const auto [lo, hi] = wilson_ci(c, n);
      EXPECT_NEAR(lo, static_cast<double>(mid - half), 1e-12);
      EXPECT_NEAR(hi, static_cast<double>(mid + half), 1e-12);
      EXPECT_LE(lo, static_cast<double>(p));
      EXPECT_GE(hi, static_cast<double>(p));
    }
  }
}

TEST(EvalkitTest, WilsonWidthShrinksWithTotal) {
  double prev = 1.0;
  for (std::size_t n = 4; n <= 4096; n *= 2) {
    const auto [lo, hi] = wilson_ci(3 * n / 4, n);
    EXPECT_LE(hi - lo, prev);
    prev = hi - lo;
  }
  const auto [l90, h90] = wilson_ci(30, 60, 0.90);
  const auto [l95, h95] = wilson_ci(30, 60, 0.95);
  EXPECT_LT(h90 - l90, h95 - l95);
}

TEST(EvalkitTest, KGrid) {
  EXPECT_EQ(k_grid(32), (std::vector<std::size_t>{1, 2, 4, 8, 16, 32}));
  EXPECT_EQ(k_grid(12), (std::vector<std::size_t>{1, 2, 4, 8, 12}));
  EXPECT_EQ(k_grid(1), (std::vector<std::size_t>{1}));
  EXPECT_THROW(k_grid(0), std::invalid_argument);
}

TEST(EvalkitTest, OracleIsPerfectAtEveryK) {
  const auto p = plan(1);
  for (const auto& split : {"eval_id", "eval_ood"}) {
    const auto r = evaluate(SampledOracle{}, "ORACLE", split, p.split(split), {8, 1, false});
    ASSERT_EQ(r.rows.size(), 4u);
    for (const auto& row : r.rows) {
      EXPECT_EQ(row.accuracy, 1.0);
      EXPECT_EQ(row.total, 500u);
      EXPECT_EQ(row.ci_hi, 1.0);
    }
  }
  const auto det = evaluate(*oracle_judge(), "ORACLE", "ID", p.eval_id, {32, 1, true});
  ASSERT_EQ(det.rows.size(), 1u);
  EXPECT_EQ(det.rows[0].k, 1u);
  EXPECT_EQ(det.rows[0].accuracy, 1.0);
}

TEST(EvalkitTest, ConstantJudgeSitsNearHalf) {
  const auto p = plan(2);
  std::size_t a = 0;
  for (const auto& pair : p.eval_id) a += pair.gold == Indicator::kA;
  const double bound = 3 * std::sqrt(0.25 / 500);
  ASSERT_LE(std::abs(a / 500.0 - 0.5), bound) << "split is not label balanced";
  const auto r = evaluate(*constant_judge(Indicator::kA), "A", "ID", p.eval_id, {});
  EXPECT_EQ(r.rows[0].correct, a);
  EXPECT_LE(std::abs(r.rows[0].accuracy - 0.5), bound);
}

TEST(EvalkitTest, RewardJudgeMatchesSecondPass) {
  const auto p = plan(3, 200);
  const auto ckpt = checkpoint_of(randomized(small(HeadVariant::kBtReward), 3));
  const auto r = evaluate(*reward_judge(ckpt), "BT-RM", "ID", p.eval_id, {});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.eval_id.size(); ++i) {
    const auto& pair = p.eval_id[i];
    const double s1 = lm::reward_head_score(ckpt.model, pair.x, pair.y1);
    const double s2 = lm::reward_head_score(ckpt.model, pair.x, pair.y2);
    const double w = pair.gold == Indicator::kA ? s1 : s2;
    const double l = pair.gold == Indicator::kA ? s2 : s1;
    correct += w > l;
    EXPECT_EQ(r.verdicts[i], s1 >= s2 ? Indicator::kA : Indicator::kB);
  }
  EXPECT_EQ(r.rows[0].correct, correct);
}

TEST(EvalkitTest, PairAndDirectJudgesAgreeWithTheirScores) {
  const auto p = plan(4, 100);
  const auto pair_ckpt = checkpoint_of(randomized(small(HeadVariant::kPairReward), 4));
  const auto lm_ckpt = checkpoint_of(randomized(small(HeadVariant::kLm), 4));
  const auto pr = evaluate(*pair_judge(pair_ckpt), "PAIR-RM", "ID", p.eval_id, {});
  const auto dr = evaluate(*direct_judge(lm_ckpt), "GENRM", "ID", p.eval_id, {});
  for (std::size_t i = 0; i < p.eval_id.size(); ++i) {
    const auto& q = p.eval_id[i];
    EXPECT_EQ(pr.verdicts[i],
              lm::pair_head_logit(pair_ckpt.model, q.x, q.y1, q.y2) >= 0 ? Indicator::kA : Indicator::kB);
    const auto probs = pref::indicator_distribution(lm_ckpt.model, q.x, q.y1, q.y2);
    EXPECT_EQ(dr.verdicts[i], probs.a >= probs.b ? Indicator::kA : Indicator::kB);
  }
}

TEST(EvalkitTest, CotJudgeVotesOverPrefixesOfOnePool) {
  const auto p = plan(5, 20);
  const auto ckpt = checkpoint_of(randomized(small(HeadVariant::kLm), 5, 0.5));
  const auto judge = cot_judge(ckpt);
  const std::vector<std::size_t> ks{1, 2, 4, 8};
  for (const auto& pair : p.eval_id) {
    const auto out = judge->judge(view_of(pair), ks, 77);
    std::vector<std::uint64_t> seeds;
    for (std::size_t j = 0; j < 8; ++j) seeds.push_back(mix_seed(77, j));
    const auto prompt = world::encode_layout(world::LayoutMode::kCotJudge, pair.x, pair.y1, pair.y2);
    const auto seqs = lm::sample_batch(ckpt.model, prompt, seeds, star::judge_sampling());
    std::vector<pref::JudgeSample> pool;
    std::size_t invalid = 0;
    for (const auto& s : seqs) {
      pool.push_back(pref::parse_judgment(s.tokens, s.logprob));
      invalid += !pool.back().valid();
    }
    EXPECT_EQ(out.samples, 8u);
    EXPECT_EQ(out.invalid, invalid);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const auto v = pref::majority_vote(pool, ks[i]);
      EXPECT_EQ(out.verdicts[i], v.chosen);
      EXPECT_DOUBLE_EQ(out.p_a[i], v.p_a);
    }
  }
}

TEST(EvalkitTest, EvaluationIsDeterministicUnderSeed) {
  const auto p = plan(6, 40);
  const auto ckpt = checkpoint_of(randomized(small(HeadVariant::kLm), 6, 0.5));
  const auto judge = cot_judge(ckpt);
  const auto a = evaluate(*judge, "COT", "ID", p.eval_id, {4, 9, false});
  const auto b = evaluate(*judge, "COT", "ID", p.eval_id, {4, 9, false});
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.stats, b.stats);
  EXPECT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(a.stats.samples, 40u * 4);
}

TEST(EvalkitTest, DebiasAveragesBothOrderings) {
  const auto p = plan(7, 50);
  const auto c = evaluate(*constant_judge(Indicator::kB), "B", "ID", p.eval_id, {1, 0, true});
  // p_a = (0 + (1 - 0)) / 2 = 0.5 for every pair, which resolves to A.
  for (auto v : c.verdicts) EXPECT_EQ(v, Indicator::kA);
  const auto o = evaluate(*oracle_judge(), "ORACLE", "ID", p.eval_id, {1, 0, true});
  EXPECT_EQ(o.rows[0].accuracy, 1.0);
}

TEST(EvalkitTest, FlipRates) {
  const auto p = plan(8, 200);
  EXPECT_EQ(position_swap_consistency(*oracle_judge(), p.eval_id, 1).rate, 0.0);
  EXPECT_EQ(position_swap_consistency(*constant_judge(Indicator::kA), p.eval_id, 1).rate, 1.0);
  const auto pair_ckpt = checkpoint_of(randomized(small(HeadVariant::kPairReward), 8));
  const auto f = position_swap_consistency(*pair_judge(pair_ckpt), p.eval_id, 1);
  EXPECT_EQ(f.rate, 0.0);
  EXPECT_EQ(f.total, 200u);
  const auto bt_ckpt = checkpoint_of(randomized(small(HeadVariant::kBtReward), 8));
  EXPECT_EQ(position_swap_consistency(*reward_judge(bt_ckpt), p.eval_id, 1).rate, 0.0);
}

MetricsReport sample_report() {
  MetricsReport r;
  r.version = "test";
  r.config_digest = "abc";
  r.seeds = {1, 2};
  auto row = [](std::string m, std::string s, std::size_t k, std::size_t c) {
    const auto [lo, hi] = wilson_ci(c, 300);
    return MetricRow{m, s, k, c, 300, c / 300.0, lo, hi};
  };
  r.rows = {row("STAR-DPO", "OOD", 2, 170), row("BT-RM", "ID", 1, 280),
            row("STAR-DPO", "ID", 16, 200), row("STAR-DPO", "ID", 2, 190),
            row("BT-RM", "OOD", 1, 150)};
  r.methods = {{"STAR-DPO", "ID", 900, 12, 12 / 900.0, 0.25}, {"BT-RM", "ID", 0, 0, 0.0, std::nullopt}};
  return r;
}

fs::path fresh(const std::string& name) {
  auto d = fs::temp_directory_path() / ("genrm_evalkit_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(EvalkitTest, ReportRoundTripAndOrdering) {
  const auto dir = fresh("report");
  emit_report(sample_report(), dir);
  auto expected = sample_report();
  expected.normalize();
  ASSERT_EQ(expected.rows[0].method, "BT-RM");
  EXPECT_EQ(expected.rows[2].k, 2u);
  EXPECT_EQ(expected.rows[3].k, 16u);

  const auto back = read_report(dir / "report.json");
  ASSERT_EQ(back.rows.size(), expected.rows.size());
  EXPECT_EQ(back.seeds, expected.seeds);
  EXPECT_EQ(back.config_digest, "abc");
  for (std::size_t i = 0; i < back.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].method, expected.rows[i].method);
    EXPECT_EQ(back.rows[i].k, expected.rows[i].k);
    EXPECT_EQ(back.rows[i].correct, expected.rows[i].correct);
    EXPECT_NEAR(back.rows[i].accuracy, expected.rows[i].accuracy, 5e-7);
    EXPECT_NEAR(back.rows[i].ci_lo, expected.rows[i].ci_lo, 5e-7);
  }
  EXPECT_EQ(back.methods[0].method, "BT-RM");
  EXPECT_FALSE(back.methods[0].flip_rate);
  EXPECT_NEAR(*back.methods[1].flip_rate, 0.25, 1e-12);

  const auto table = read_table(dir / "metrics.csv");
  ASSERT_EQ(table.size(), expected.rows.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    EXPECT_EQ(table[i].split, expected.rows[i].split);
    EXPECT_EQ(format_fixed(table[i].accuracy), format_fixed(expected.rows[i].accuracy));
    EXPECT_EQ(format_fixed(table[i].ci_hi), format_fixed(expected.rows[i].ci_hi));
  }
  const std::string csv = slurp(dir / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,split,K,accuracy,ci_lo,ci_hi");
  EXPECT_NE(csv.find("BT-RM,ID,1,0.933333,"), std::string::npos);

  // Re-emitting the parsed report reproduces the files byte for byte.
  const auto dir2 = fresh("report2");
  emit_report(back, dir2);
  EXPECT_EQ(slurp(dir / "report.json"), slurp(dir2 / "report.json"));
  EXPECT_EQ(slurp(dir / "metrics.csv"), slurp(dir2 / "metrics.csv"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(EvalkitTest, ReportErrorsNameThePath) {
  const auto file = fs::temp_directory_path() / "genrm_evalkit_blocker";
  { std::ofstream(file) << "x"; }
  try {
    emit_report(sample_report(), file / "sub");
    FAIL() << "wrote under a regular file";
  } catch (const ReportError& e) {
    EXPECT_NE(std::string(e.what()).find("genrm_evalkit_blocker"), std::string::npos);
  }
  EXPECT_THROW(read_table(file), ReportError);
  EXPECT_THROW(read_report(file), ReportError);
  fs::remove(file);
}

TEST(EvalkitTest, EmptySplitIsRejected) {
  const std::vector<world::PreferencePair> none;
  EXPECT_THROW(evaluate(*oracle_judge(), "X", "ID", none, {}), std::invalid_argument);
}

}  // namespace
}  // namespace genrm::eval
