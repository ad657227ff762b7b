#include "estr/bench.hpp"

#include <chrono>

#include "estr/tape.hpp"
#include "estr/tensor.hpp"

namespace estr {

BackwardTiming time_entropy_backward(const Denoiser& model,
                                     const MaskedSequence& state, int t,
                                     const std::vector<int>& candidates,
                                     bool active_queries) {
  Tape tape;
  const auto bound = model.bind(tape, /*requires_grad=*/false);
  const Tape::Id x0 = tape.input(model.state_embeddings(state), true);
  RowMask active(candidates);
  const auto graph = model.forward_embeddings(
      tape, bound, x0, t, active_queries ? &active : nullptr);
  const Tape::Id readout = entropy_readout(tape, graph.probs, state.masked);

  const auto start = std::chrono::steady_clock::now();
  auto grads = tape.backward(readout);
  const auto stop = std::chrono::steady_clock::now();

  BackwardTiming out;
  out.seconds = std::chrono::duration<double>(stop - start).count();
  out.work = tape.backward_work();
  out.nodes = tape.backward_nodes_visited();
  (void)grads;
  return out;
}

}  // namespace estr
