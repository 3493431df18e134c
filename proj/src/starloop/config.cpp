#include "genrm/starloop/config.hpp"

#include <stdexcept>
#include <string>

namespace genrm::star {

namespace {

constexpr Method kMethods[] = {Method::kBtRm,    Method::kPairRm,  Method::kGenRm,
                               Method::kStarSft, Method::kStarDpo, Method::kRationalizerSft};

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::kBtRm: return "BT-RM";
    case Method::kPairRm: return "PAIR-RM";
    case Method::kGenRm: return "GENRM";
    case Method::kStarSft: return "STAR-SFT";
    case Method::kStarDpo: return "STAR-DPO";
    case Method::kRationalizerSft: return "RATIONALIZER-SFT";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (Method m : kMethods) {
    if (text == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(text) + "'");
}

lm::HeadVariant head_for(Method method) {
  switch (method) {
    case Method::kBtRm: return lm::HeadVariant::kBtReward;
    case Method::kPairRm: return lm::HeadVariant::kPairReward;
    default: return lm::HeadVariant::kLm;
  }
}

bool is_baseline(Method method) {
  return method == Method::kBtRm || method == Method::kPairRm || method == Method::kGenRm;
}

bool is_iterative(Method method) { return !is_baseline(method); }

std::string_view to_string(RationaleSource source) {
  return source == RationaleSource::kGold ? "gold" : "checkpoint";
}

RationaleSource parse_rationale_source(std::string_view text) {
  if (text == "gold") return RationaleSource::kGold;
  if (text == "checkpoint") return RationaleSource::kCheckpoint;
  throw std::invalid_argument("rationale source must be gold or checkpoint, got '" +
                              std::string(text) + "'");
}

double TrainConfig::effective_lr() const {
  return method == Method::kRationalizerSft ? lr * rationalizer_lr_scale : lr;
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(lr, "lr");
  positive(rationalizer_lr_scale, "rationalizer_lr_scale");
  positive(dpo_beta, "dpo_beta");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (samples_per_example == 0) throw std::invalid_argument("samples_per_example must be positive");
  if (max_dpo_pairs_per_example == 0) {
    throw std::invalid_argument("max_dpo_pairs_per_example must be positive");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
    throw std::invalid_argument("warmup_fraction must lie in [0, 1)");
  }
}

nd::AdamWConfig TrainConfig::optimizer(std::size_t total_steps) const {
  nd::AdamWConfig c;
  c.lr_max = effective_lr();
  c.total_steps = total_steps;
  c.schedule = schedule;
  c.warmup_fraction = warmup_fraction;
  return c;
}

}  // namespace genrm::star
