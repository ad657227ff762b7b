// Trainer: loss-curve reproducibility, optimizer progress on the copy task,
// divergence reporting, and the held-out cross-entropy metric.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "estr/denoiser.hpp"
#include "estr/diffusion.hpp"
#include "estr/tasks.hpp"
#include "estr/train.hpp"
#include "test_util.hpp"

using namespace estr;

namespace {

std::vector<std::vector<int>> tokens(const Dataset& data) {
  std::vector<std::vector<int>> out;
  out.reserve(data.examples.size());
  for (const auto& ex : data.examples) out.push_back(ex.tokens);
  return out;
}

TaskSpec copy16(std::uint64_t seed) {
  TaskSpec s;
  s.kind = TaskKind::kCopy;
  s.length = 16;
  s.vocab = 16;
  s.seed = seed;
  return s;
}

DenoiserConfig copy_model_config() {
  DenoiserConfig c;
  c.vocab = 16;
  c.length = 16;
  c.d_model = 32;
  c.layers = 1;
  c.heads = 2;
  c.hidden = 32;
  return c;
}

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.vocab = 16;
  c.length = 8;
  c.d_model = 16;
  c.layers = 1;
  c.heads = 2;
  c.hidden = 16;
  return c;
}

}  // namespace

TEST_CASE("zero learning rate yields a bitwise-constant loss curve") {
  Denoiser model = Denoiser::init(small_config(), 3);
  TaskSpec spec = copy16(1);
  spec.length = 8;
  const auto data = tokens(generate(spec, 48));
  const NoiseSchedule schedule = NoiseSchedule::linear(8);

  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 16;
  tc.learning_rate = 0.0;
  tc.seed = 4;
  const TrainResult r = train(model, data, schedule, tc);
  REQUIRE(static_cast<int>(r.epoch_loss.size()) == tc.epochs);
  for (double loss : r.epoch_loss) {
    CHECK(std::isfinite(loss));
    CHECK(loss == r.epoch_loss[0]);  // exactly: same params, same corruption
  }
}

TEST_CASE("identical seeds reproduce losses and parameters bitwise") {
  TaskSpec spec = copy16(1);
  spec.length = 8;
  const auto data = tokens(generate(spec, 48));
  const NoiseSchedule schedule = NoiseSchedule::linear(8);

  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.learning_rate = 1e-2;
  tc.seed = 9;

  Denoiser a = Denoiser::init(small_config(), 3);
  Denoiser b = Denoiser::init(small_config(), 3);
  const TrainResult ra = train(a, data, schedule, tc);
  const TrainResult rb = train(b, data, schedule, tc);

  REQUIRE(ra.epoch_loss.size() == rb.epoch_loss.size());
  for (std::size_t i = 0; i < ra.epoch_loss.size(); ++i)
    CHECK(ra.epoch_loss[i] == rb.epoch_loss[i]);

  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(estr::testing::bitwise_equal(*pa[i].second, *pb[i].second));

  // Training moved the parameters away from initialization.
  Denoiser fresh = Denoiser::init(small_config(), 3);
  const auto pf = fresh.parameters();
  bool moved = false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    moved |= !estr::testing::bitwise_equal(*pa[i].second, *pf[i].second);
  CHECK(moved);
}

TEST_CASE("copy task trains to low held-out masked cross-entropy") {
  // Budget chosen for a single desktop core: ~1-2 s wall time, held-out
  // cross-entropy lands near 5e-3, a 20x margin under the 0.1 bar.
  Denoiser model = Denoiser::init(copy_model_config(), 0);
  const TaskSpec train_spec = copy16(1);
  const TaskSpec heldout_spec = copy16(2);
  const auto train_data = tokens(generate(train_spec, 512));
  const auto heldout = tokens(generate(heldout_spec, 256));
  const NoiseSchedule schedule = NoiseSchedule::linear(16);
  const std::vector<int> prompt = prompt_positions(train_spec);

  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 32;
  tc.learning_rate = 1e-2;
  tc.seed = 5;
  tc.keep_visible = prompt;

  const TrainResult r = train(model, train_data, schedule, tc);
  REQUIRE(static_cast<int>(r.epoch_loss.size()) == tc.epochs);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());

  const double ce =
      masked_cross_entropy(model, heldout, schedule, 9, prompt);
  INFO("held-out masked cross-entropy: " << ce);
  CHECK(ce < 0.1);
}

TEST_CASE("masked cross-entropy is seed-deterministic and needs masks") {
  Denoiser model = Denoiser::init(small_config(), 3);
  TaskSpec spec = copy16(1);
  spec.length = 8;
  const auto data = tokens(generate(spec, 32));
  const NoiseSchedule schedule = NoiseSchedule::linear(8);

  const double a = masked_cross_entropy(model, data, schedule, 7);
  const double b = masked_cross_entropy(model, data, schedule, 7);
  CHECK(a == b);
  CHECK(std::isfinite(a));
  CHECK(a > 0.0);

  // Exempting every position from corruption leaves nothing to score.
  std::vector<int> all(8);
  for (int i = 0; i < 8; ++i) all[i] = i;
  CHECK_THROWS_AS(masked_cross_entropy(model, data, schedule, 7, all),
                  ContractError);
}

TEST_CASE("non-finite loss raises a divergence error with its location") {
  Denoiser model = Denoiser::init(small_config(), 3);
  // Poison one weight so the very first batch produces a non-finite loss.
  model.parameters()[0].second->data[0] =
      std::numeric_limits<float>::quiet_NaN();

  TaskSpec spec = copy16(1);
  spec.length = 8;
  const auto data = tokens(generate(spec, 32));
  const NoiseSchedule schedule = NoiseSchedule::linear(8);

  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  tc.seed = 2;
  try {
    train(model, data, schedule, tc);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch starting at 0") != std::string::npos);
  }
}

TEST_CASE("training rejects empty or ill-sized datasets") {
  Denoiser model = Denoiser::init(small_config(), 3);
  const NoiseSchedule schedule = NoiseSchedule::linear(8);
  TrainConfig tc;

  std::vector<std::vector<int>> empty;
  CHECK_THROWS_AS(train(model, empty, schedule, tc), ContractError);

  // Sequences longer than the model's positional table cannot be embedded.
  std::vector<std::vector<int>> wrong = {{0, 1, 2, 3, 4, 5, 6, 7, 8}};
  CHECK_THROWS_AS(train(model, wrong, schedule, tc), ContractError);
}
