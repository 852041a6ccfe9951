#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "thinkact/diffcore.hpp"
#include "thinkact/model.hpp"

namespace thinkact {

struct NamedCheck {
  std::string name;
  diff::GradCheckResult result;
};

// Finite-difference checks of every differentiable primitive on random inputs.
// Each output is reduced to a scalar through a fixed random projection.
std::vector<NamedCheck> check_primitives(double eps, std::uint64_t seed);

// Small model config used for whole-model gradient checks.
ModelConfig gradcheck_config(Variant variant, Weighting weighting);

// Checks d(total loss)/d(parameters) for a freshly initialized model whose
// parameters are redrawn uniformly in [-0.5, 0.5] so no ReLU sits at a kink.
// The example comes from a random d=4 world.
diff::GradCheckResult check_model(const ModelConfig& config, double eps, std::size_t coordinates, std::uint64_t seed);

}  // namespace thinkact
