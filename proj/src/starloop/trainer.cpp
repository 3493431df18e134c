#include "genrm/starloop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "genrm/common/digest.hpp"

namespace genrm::star {

TrainStats run_epochs(lm::Model& model, std::size_t count,
                      const std::function<nd::Tensor(std::span<const std::size_t>)>& loss_of,
                      const TrainConfig& config, double lr, std::uint64_t seed) {
  TrainStats stats;
  if (count == 0 || config.epochs == 0) return stats;
  const std::size_t per_epoch = (count + config.batch_size - 1) / config.batch_size;
  nd::AdamWConfig opt_config = config.optimizer(per_epoch * static_cast<std::size_t>(config.epochs));
  opt_config.lr_max = lr;
  nd::AdamW opt(model.trainable(), opt_config);

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < count; begin += config.batch_size) {
      const std::size_t end = std::min(count, begin + config.batch_size);
      nd::Tensor loss = loss_of(std::span<const std::size_t>(order).subspan(begin, end - begin));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(stats.steps),
                               lm::Checkpoint{model, {}});
      }
      opt.zero_grad();
      loss.backward();
      try {
        opt.step();
      } catch (const nd::NonFiniteGradient& e) {
        throw TrainingDiverged(e.what(), lm::Checkpoint{model, {}});
      }
      total += value;
      ++batches;
      ++stats.steps;
    }
    stats.epoch_losses.push_back(total / static_cast<double>(batches));
  }
  return stats;
}

lm::Checkpoint train_baseline(const TrainConfig& config, const lm::Checkpoint& start,
                              std::span<const pref::PreferencePair> pairs, TrainStats* stats) {
  config.validate();
  if (!is_baseline(config.method)) {
    throw std::invalid_argument("train_baseline does not handle " +
                                std::string(to_string(config.method)));
  }
  start.model.require_head(head_for(config.method), "train_baseline");
  lm::Checkpoint out{start.model, {std::string(to_string(config.method)), 0, config.seed, start.id()}};
  if (config.epochs == 0 || pairs.empty()) {
    if (stats) *stats = {};
    return out;
  }
  std::vector<pref::PreferencePair> batch;
  auto loss_of = [&](std::span<const std::size_t> rows) {
    batch.clear();
    for (std::size_t i : rows) batch.push_back(pairs[i]);
    switch (config.method) {
      case Method::kBtRm: return pref::bt_loss(out.model, batch);
      case Method::kPairRm: return pref::pair_loss(out.model, batch);
      default: return pref::genrm_loss(out.model, batch);
    }
  };
  TrainStats s;
  try {
    s = run_epochs(out.model, pairs.size(), loss_of, config, config.effective_lr(),
                   mix_seed(config.seed, 0x7261696e));
  } catch (TrainingDiverged& e) {
    e.last_good.provenance = out.provenance;
    throw;
  }
  lm::round_to_storage_precision(out.model);
  if (stats) *stats = std::move(s);
  return out;
}

lm::Checkpoint initial_checkpoint(const lm::ModelConfig& model, Method method, std::uint64_t seed) {
  lm::Checkpoint out{lm::Model::init(model.with_head(head_for(method)), seed),
                     {"INIT", 0, seed, ""}};
  lm::round_to_storage_precision(out.model);
  return out;
}

}  // namespace genrm::star
