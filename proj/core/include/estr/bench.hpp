#pragma once
// Shared measurement probe for the restricted-backward scaling claim: cost
// of the surrogate entropy backward as a function of the active query set.
// Used by both the command-line bench and the microbenchmark binary so they
// time exactly the same work.

#include <cstdint>
#include <vector>

#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"

namespace estr {

struct BackwardTiming {
  double seconds = 0.0;      // wall time of the backward sweep alone
  std::uint64_t work = 0;    // tape element-visit count for that sweep
  int nodes = 0;             // tape nodes touched
};

// Builds the surrogate forward (untimed) for `state` at step `t` with the
// given candidate set as active query rows (dense backward when
// `active_queries` is false), then times one backward of the total masked
// entropy readout.
BackwardTiming time_entropy_backward(const Denoiser& model,
                                     const MaskedSequence& state, int t,
                                     const std::vector<int>& candidates,
                                     bool active_queries);

}  // namespace estr
