#ifndef MERMIX_TRAINER_HPP
#define MERMIX_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mermix/aux_tasks.hpp"
#include "mermix/data_io.hpp"
#include "mermix/fusion_model.hpp"

namespace mermix {

struct AdamWOptions {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  AdamWOptions adamw;
  int batch_size = 16;
  int epochs = 0;
  double lambda_main = 1.0;
  double lambda_aux1 = 1.0;
  double lambda_aux2 = 1.0;
  bool enable_aux1 = false;
  bool enable_aux2 = false;
  std::optional<double> grad_clip_norm;
  std::uint64_t seed = 0;

  void validate() const;
};

/// First/second moments laid out like the parameters.
struct OptimizerState {
  FusionParams m;
  FusionParams v;
  long step = 0;
};

OptimizerState make_optimizer_state(const FusionParams& params, const FusionConfig& cfg);

/// One decoupled-weight-decay Adam update of a single tensor. `step` is the
/// 1-based step count used for bias correction.
void adamw_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long step, const AdamWOptions& opt);

/// Updates every parameter; throws NumericError naming the first parameter with
/// a non-finite gradient before touching anything.
void adamw_step(FusionParams& params, const FusionParams& grads, OptimizerState& state, const FusionConfig& cfg,
                const AdamWOptions& opt);

/// Independent, reproducible seed for a named substream.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

struct LossTerms {
  Tensor total;
  double main = 0;
  double aux1 = 0;
  double aux2 = 0;
  std::vector<int> main_predictions;
};

/// lambda_main * CE(main) + lambda_aux1 * CE(aux1 head on aux1 batch vs
/// combined labels) + lambda_aux2 * CE(main head on aux2 batch). A null aux
/// batch contributes nothing and runs no forward pass.
LossTerms multitask_loss(const FusionWeights<Tensor>& w, const FusionConfig& cfg, const TrainConfig& tcfg,
                         const Batch& batch, const Aux1Batch* aux1, const Aux2Batch* aux2,
                         const ForwardOptions& opts = {});

struct TrainRngs {
  std::mt19937_64 shuffle;
  std::mt19937_64 aux;
  std::mt19937_64 dropout;

  explicit TrainRngs(std::uint64_t seed);
};

struct StepResult {
  double main = 0;
  double aux1 = 0;
  double aux2 = 0;
  std::size_t correct = 0;
};

StepResult train_step(FusionParams& params, OptimizerState& state, const Batch& batch, const Dataset& data,
                      const ClassPools& pools, const FusionConfig& cfg, const TrainConfig& tcfg, TrainRngs& rngs);

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double loss_main = 0;
  double loss_aux1 = 0;
  double loss_aux2 = 0;
  double train_accuracy = 0;
};

std::string to_json_line(const EpochRecord& rec);

struct TrainResult {
  FusionParams params;
  std::vector<EpochRecord> history;
};

/// Seeded init, then `epochs` passes of shuffled mini-batches over `indices`.
TrainResult train(const Dataset& data, std::span<const std::size_t> indices, const FusionConfig& cfg,
                  const TrainConfig& tcfg, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Same loop from given starting parameters.
TrainResult train_from(FusionParams params, const Dataset& data, std::span<const std::size_t> indices,
                       const FusionConfig& cfg, const TrainConfig& tcfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace mermix

#endif  // MERMIX_TRAINER_HPP
