#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "genrm/lm/checkpoint.hpp"
#include "genrm/prefmodel/losses.hpp"
#include "genrm/starloop/config.hpp"

namespace genrm::star {

/// Raised when a loss or gradient stops being finite. `last_good` holds the
/// parameters from before the failing step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, lm::Checkpoint last_good)
      : std::runtime_error(what), last_good(std::move(last_good)) {}
  lm::Checkpoint last_good;
};

struct TrainStats {
  std::size_t steps = 0;
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
};

/// Minibatch AdamW over `count` rows. `loss_of` builds the loss for a list
/// of row indices. Row order is reshuffled every epoch from `seed`.
TrainStats run_epochs(lm::Model& model, std::size_t count,
                      const std::function<nd::Tensor(std::span<const std::size_t>)>& loss_of,
                      const TrainConfig& config, double lr, std::uint64_t seed);

/// Trains BT-RM, PAIR-RM or GENRM on `pairs`. The result is rounded to
/// storage precision and its provenance names the input checkpoint.
lm::Checkpoint train_baseline(const TrainConfig& config, const lm::Checkpoint& start,
                              std::span<const pref::PreferencePair> pairs,
                              TrainStats* stats = nullptr);

/// Fresh checkpoint with the head variant `method` needs.
lm::Checkpoint initial_checkpoint(const lm::ModelConfig& model, Method method, std::uint64_t seed);

}  // namespace genrm::star
