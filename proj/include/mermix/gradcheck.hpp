#ifndef MERMIX_GRADCHECK_HPP
#define MERMIX_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mermix/fusion_model.hpp"

namespace mermix {

struct GradcheckOptions {
  FusionConfig model{.feature_dim = 8, .num_heads = 2, .num_layers = 2, .num_emotions = 4};
  int batch_size = 3;
  int max_steps = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so gradients that vanish
  // analytically (e.g. key biases under softmax shift invariance) compare on
  // an absolute scale.
  double magnitude_floor = 1e-5;
  bool break_grad = false;
  std::uint64_t seed = 1;
};

struct ParameterCheck {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0;
};

struct GradcheckReport {
  std::vector<ParameterCheck> parameters;
  double max_rel_error = 0;
  bool passed = false;
};

/// Central finite differences of the full multi-task loss (main + aux1 + aux2
/// on fixed aux batches) against backward(), for every parameter scalar of a
/// randomly initialised model on random masked inputs.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

}  // namespace mermix

#endif  // MERMIX_GRADCHECK_HPP
