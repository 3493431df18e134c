#pragma once

#include <cstdint>
#include <string_view>

#include "genrm/lm/model.hpp"
#include "genrm/ndtensor/optim.hpp"

namespace genrm::star {

enum class Method { kBtRm, kPairRm, kGenRm, kStarSft, kStarDpo, kRationalizerSft };

std::string_view to_string(Method method);
Method parse_method(std::string_view text);
lm::HeadVariant head_for(Method method);
bool is_baseline(Method method);
bool is_iterative(Method method);

/// Where post-rationalization rationales come from.
enum class RationaleSource { kGold, kCheckpoint };

std::string_view to_string(RationaleSource source);
RationaleSource parse_rationale_source(std::string_view text);

struct TrainConfig {
  Method method = Method::kGenRm;
  double lr = 1e-3;
  // RATIONALIZER-SFT trains at lr * rationalizer_lr_scale.
  double rationalizer_lr_scale = 20.0;
  double dpo_beta = 1.0;
  int epochs = 3;
  std::size_t samples_per_example = 4;
  std::size_t max_dpo_pairs_per_example = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  RationaleSource rationale_source = RationaleSource::kGold;
  nd::Schedule schedule = nd::Schedule::kCosine;
  double warmup_fraction = 0.1;

  double effective_lr() const;
  /// Throws std::invalid_argument on a non-positive hyperparameter.
  void validate() const;
  nd::AdamWConfig optimizer(std::size_t total_steps) const;
};

}  // namespace genrm::star
