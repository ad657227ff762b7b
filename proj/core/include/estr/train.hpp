#pragma once
// Training loop for the denoiser: Adam on the masked cross-entropy loss
// with schedule-derived per-step weights.
//
// Each example in a batch draws one uniform step t >= 1, is corrupted by the
// forward masking process, and contributes its weighted masked
// cross-entropy; the batch mean is differentiated in one backward pass.
// The corruption stream restarts identically at every epoch, so epochs are
// comparable point evaluations of the same objective (and a zero learning
// rate yields a bitwise-constant loss curve); sample diversity comes from
// the dataset, not from re-drawing masks.

#include <cstdint>
#include <vector>

#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"

namespace estr {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Conditioning positions that the corruption never masks (the decode-time
  // prompt region); empty = corrupt everywhere.
  std::vector<int> keep_visible;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean weighted loss per epoch
};

// Trains in place. Throws NumericError with the epoch/batch position if the
// loss stops being finite.
TrainResult train(Denoiser& model,
                  const std::vector<std::vector<int>>& dataset,
                  const NoiseSchedule& schedule, const TrainConfig& config);

// Mean cross-entropy (nats) of the model's prediction at masked positions,
// averaged over all masked positions produced by one corruption pass over
// the dataset. Unweighted; this is the quality metric, not the loss.
double masked_cross_entropy(const Denoiser& model,
                            const std::vector<std::vector<int>>& dataset,
                            const NoiseSchedule& schedule, std::uint64_t seed,
                            const std::vector<int>& keep_visible = {});

}  // namespace estr
