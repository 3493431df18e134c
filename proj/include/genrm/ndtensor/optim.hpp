#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "genrm/ndtensor/tensor.hpp"

namespace genrm::nd {

enum class Schedule { kCosine, kConstant };

struct AdamWConfig {
  double lr_max = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double warmup_fraction = 0.1;
  double eps = 1e-8;
  // Global gradient-norm bound; zero or negative disables clipping.
  double clip_norm = 1.0;
  std::size_t total_steps = 1;
  Schedule schedule = Schedule::kCosine;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Learning rate at `step`: linear warmup to lr_max over the first
/// warmup_fraction * total_steps steps, then cosine decay to zero at
/// total_steps. Steps past the end clamp to zero with a warning.
double lr_at(std::size_t step, const AdamWConfig& config);

struct StepStats {
  double lr = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
};

/// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  /// Applies one update from the parameters' accumulated gradients.
  /// Throws NonFiniteGradient (leaving parameters and moments untouched)
  /// if any gradient entry is NaN or infinite.
  StepStats step();
  void zero_grad();

  std::size_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace genrm::nd
