#include "estr/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "estr/error.hpp"
#include "estr/rng.hpp"

namespace estr {
namespace {

// Adam state for one parameter tensor.
struct Moments {
  std::vector<double> m, v;
};

}  // namespace

TrainResult train(Denoiser& model, const std::vector<std::vector<int>>& dataset,
                  const NoiseSchedule& schedule, const TrainConfig& config) {
  if (dataset.empty()) throw ContractError("train: empty dataset");
  if (config.epochs < 1 || config.batch_size < 1)
    throw ContractError("train: epochs and batch_size must be >= 1");
  schedule.validate();
  const Vocabulary vocab{model.config().vocab};

  auto params = model.parameters();
  std::vector<Moments> moments(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    moments[p].m.assign(params[p].second->data.size(), 0.0);
    moments[p].v.assign(params[p].second->data.size(), 0.0);
  }
  long long adam_step = 0;

  TrainResult result;
  const int n = static_cast<int>(dataset.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng noise(config.seed, "corruption");  // identical stream every epoch
    double epoch_loss = 0.0;
    long long examples_seen = 0;

    for (int start = 0; start < n; start += config.batch_size) {
      const int stop = std::min(n, start + config.batch_size);
      Tape tape;
      const auto bound = model.bind(tape, /*requires_grad=*/true);
      Tape::Id total = Tape::kNoNode;
      float batch_loss = 0.0f;
      std::unordered_map<Tape::Id, Tensor> grads;
      // Numeric failures anywhere in the batch (overflowing activations,
      // non-finite loss, exploding gradients) surface with their location.
      try {
        for (int e = start; e < stop; ++e) {
          const int t = noise.next_int(1, schedule.steps);
          const MaskedSequence xt =
              forward_mask(dataset[e], t, schedule, vocab, noise,
                           config.keep_visible.empty() ? nullptr
                                                       : &config.keep_visible);
          const auto graph = model.forward_tokens(tape, bound, xt, t);
          const Tape::Id loss = elbo_loss(tape, graph.probs, dataset[e], xt,
                                          t, schedule, vocab);
          total = (total == Tape::kNoNode) ? loss : tape.add(total, loss);
        }
        const Tape::Id mean =
            tape.scale(total, 1.0f / static_cast<float>(stop - start));
        batch_loss = tape.value(mean).data[0];
        if (!std::isfinite(batch_loss))
          throw NumericError("non-finite loss");
        grads = tape.backward(mean);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start) + ": " + e.what());
      }
      epoch_loss += static_cast<double>(batch_loss) * (stop - start);
      examples_seen += stop - start;

      ++adam_step;
      const double bc1 = 1.0 - std::pow(config.beta1, adam_step);
      const double bc2 = 1.0 - std::pow(config.beta2, adam_step);
      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& value = *params[p].second;
        auto it = grads.find(bound.ids[p].second);
        for (std::size_t i = 0; i < value.data.size(); ++i) {
          const double g =
              it == grads.end() ? 0.0 : static_cast<double>(it->second.data[i]);
          auto& mm = moments[p];
          mm.m[i] = config.beta1 * mm.m[i] + (1.0 - config.beta1) * g;
          mm.v[i] = config.beta2 * mm.v[i] + (1.0 - config.beta2) * g * g;
          const double update = (mm.m[i] / bc1) /
                                (std::sqrt(mm.v[i] / bc2) + config.adam_eps);
          value.data[i] = static_cast<float>(
              static_cast<double>(value.data[i]) -
              config.learning_rate * update);
        }
      }
    }
    result.epoch_loss.push_back(epoch_loss /
                                static_cast<double>(examples_seen));
  }
  return result;
}

double masked_cross_entropy(const Denoiser& model,
                            const std::vector<std::vector<int>>& dataset,
                            const NoiseSchedule& schedule, std::uint64_t seed,
                            const std::vector<int>& keep_visible) {
  if (dataset.empty()) throw ContractError("masked_cross_entropy: no data");
  const Vocabulary vocab{model.config().vocab};
  Rng noise(seed, "eval-corruption");
  double total = 0.0;
  long long count = 0;
  for (const auto& x0 : dataset) {
    const int t = noise.next_int(1, schedule.steps);
    const MaskedSequence xt =
        forward_mask(x0, t, schedule, vocab, noise,
                     keep_visible.empty() ? nullptr : &keep_visible);
    if (xt.masked.empty()) continue;
    const auto probs = model.predict(xt, t);
    for (int i : xt.masked) {
      total -= std::log(std::max(probs[i][x0[i]], 1e-30));
      ++count;
    }
  }
  if (count == 0)
    throw ContractError("masked_cross_entropy: corruption produced no masks");
  return total / static_cast<double>(count);
}

}  // namespace estr
