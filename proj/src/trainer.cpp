#include "mermix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace mermix {

void TrainConfig::validate() const {
  if (!(adamw.learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (adamw.beta1 < 0 || adamw.beta1 >= 1 || adamw.beta2 < 0 || adamw.beta2 >= 1) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adamw.epsilon > 0)) throw ConfigError("adam epsilon must be > 0");
  if (adamw.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lambda_main > 0)) throw ConfigError("lambda_main must be > 0");
  if (lambda_aux1 < 0 || lambda_aux2 < 0) throw ConfigError("aux loss weights must be >= 0");
  if (grad_clip_norm && !(*grad_clip_norm > 0)) throw ConfigError("grad_clip_norm must be > 0");
}

OptimizerState make_optimizer_state(const FusionParams& params, const FusionConfig& cfg) {
  OptimizerState s;
  s.m = zeros_like(params, cfg);
  s.v = s.m;
  return s;
}

void adamw_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v, long step, const AdamWOptions& opt) {
  m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
  v = opt.beta2 * v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  const auto m_hat = (m.array() / c1).eval();
  const auto v_hat = (v.array() / c2).eval();
  param.array() -= opt.learning_rate * (m_hat / (v_hat.sqrt() + opt.epsilon) + opt.weight_decay * param.array());
}

void adamw_step(FusionParams& params, const FusionParams& grads, OptimizerState& state, const FusionConfig& cfg,
                const AdamWOptions& opt) {
  std::vector<const Matrix*> g;
  for_each_parameter(grads, cfg, [&](const std::string& name, const Matrix& m) {
    if (!m.allFinite()) throw NumericError("non-finite gradient in parameter " + name);
    g.push_back(&m);
  });
  std::vector<Matrix*> m1, m2;
  for_each_parameter(state.m, cfg, [&](const std::string&, Matrix& m) { m1.push_back(&m); });
  for_each_parameter(state.v, cfg, [&](const std::string&, Matrix& m) { m2.push_back(&m); });
  ++state.step;
  std::size_t i = 0;
  for_each_parameter(params, cfg, [&](const std::string&, Matrix& p) {
    adamw_update(p, *g[i], *m1[i], *m2[i], state.step, opt);
    ++i;
  });
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 over (master, stream)
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrainRngs::TrainRngs(std::uint64_t seed)
    : shuffle(derive_seed(seed, 1)), aux(derive_seed(seed, 2)), dropout(derive_seed(seed, 3)) {}

LossTerms multitask_loss(const FusionWeights<Tensor>& w, const FusionConfig& cfg, const TrainConfig& tcfg,
                         const Batch& batch, const Aux1Batch* aux1, const Aux2Batch* aux2,
                         const ForwardOptions& opts) {
  LossTerms out;
  const Tensor main_logits = main_head(w, fuse(w, cfg, batch, opts));
  const Tensor main_ce = cross_entropy(main_logits, std::span<const int>(batch.labels));
  out.main = main_ce.item();
  out.main_predictions = argmax_rows(main_logits.value());
  out.total = scale(main_ce, tcfg.lambda_main);
  if (aux1 != nullptr) {
    const Tensor logits = aux1_head(w, fuse(w, cfg, aux1->batch, opts));
    const Tensor ce = cross_entropy(logits, std::span<const int>(aux1->batch.labels));
    out.aux1 = ce.item();
    out.total = out.total + scale(ce, tcfg.lambda_aux1);
  }
  if (aux2 != nullptr) {
    const Tensor logits = main_head(w, fuse(w, cfg, aux2->batch, opts));
    const Tensor ce = cross_entropy(logits, std::span<const int>(aux2->batch.labels));
    out.aux2 = ce.item();
    out.total = out.total + scale(ce, tcfg.lambda_aux2);
  }
  return out;
}

namespace {

void clip_global_norm(FusionParams& grads, const FusionConfig& cfg, double max_norm) {
  double sq = 0;
  for_each_parameter(grads, cfg, [&](const std::string&, const Matrix& g) { sq += g.squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for_each_parameter(grads, cfg, [&](const std::string&, Matrix& g) { g *= s; });
}

}  // namespace

StepResult train_step(FusionParams& params, OptimizerState& state, const Batch& batch, const Dataset& data,
                      const ClassPools& pools, const FusionConfig& cfg, const TrainConfig& tcfg, TrainRngs& rngs) {
  std::optional<Aux1Batch> aux1;
  std::optional<Aux2Batch> aux2;
  if (tcfg.enable_aux1) aux1 = build_aux1(batch, cfg.num_emotions, rngs.aux);
  if (tcfg.enable_aux2) aux2 = build_aux2(batch, data, pools, rngs.aux);

  Tape tape;
  const auto w = bind(tape, params, cfg, true);
  ForwardOptions opts;
  opts.training = true;
  opts.rng = &rngs.dropout;
  const LossTerms loss = multitask_loss(w, cfg, tcfg, batch, aux1 ? &*aux1 : nullptr, aux2 ? &*aux2 : nullptr, opts);
  tape.backward(loss.total);
  FusionParams grads = collect_gradients(w, cfg);
  if (tcfg.grad_clip_norm) clip_global_norm(grads, cfg, *tcfg.grad_clip_norm);
  adamw_step(params, grads, state, cfg, tcfg.adamw);

  StepResult r;
  r.main = loss.main;
  r.aux1 = loss.aux1;
  r.aux2 = loss.aux2;
  for (std::size_t i = 0; i < batch.size(); ++i) r.correct += loss.main_predictions[i] == batch.labels[i] ? 1 : 0;
  return r;
}

std::string to_json_line(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["epoch"] = rec.epoch;
  j["step"] = rec.step;
  j["l_main"] = rec.loss_main;
  j["l_aux1"] = rec.loss_aux1;
  j["l_aux2"] = rec.loss_aux2;
  j["train_acc"] = rec.train_accuracy;
  return j.dump();
}

TrainResult train(const Dataset& data, std::span<const std::size_t> indices, const FusionConfig& cfg,
                  const TrainConfig& tcfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  return train_from(init_params(cfg, derive_seed(tcfg.seed, 0)), data, indices, cfg, tcfg, on_epoch);
}

TrainResult train_from(FusionParams params, const Dataset& data, std::span<const std::size_t> indices,
                       const FusionConfig& cfg, const TrainConfig& tcfg,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  tcfg.validate();
  if (indices.empty()) throw ConfigError("training split is empty");
  if (tcfg.enable_aux1 && cfg.modality != ModalityUse::both) throw ConfigError("aux1 needs both modalities");
  if (tcfg.enable_aux2 && cfg.modality != ModalityUse::both) throw ConfigError("aux2 needs both modalities");

  TrainResult result;
  result.params = std::move(params);
  OptimizerState state = make_optimizer_state(result.params, cfg);
  TrainRngs rngs(tcfg.seed);
  const ClassPools pools = ClassPools::from(data, indices, cfg.num_emotions);
  std::vector<std::size_t> order(indices.begin(), indices.end());
  const std::size_t bs = static_cast<std::size_t>(tcfg.batch_size);

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rngs.shuffle);
    double sum_main = 0, sum_aux1 = 0, sum_aux2 = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t n = std::min(bs, order.size() - start);
      const Batch batch = make_batch(data, std::span<const std::size_t>(order).subspan(start, n));
      const StepResult r = train_step(result.params, state, batch, data, pools, cfg, tcfg, rngs);
      sum_main += r.main * static_cast<double>(n);
      sum_aux1 += r.aux1 * static_cast<double>(n);
      sum_aux2 += r.aux2 * static_cast<double>(n);
      correct += r.correct;
    }
    const double total = static_cast<double>(order.size());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = state.step;
    rec.loss_main = sum_main / total;
    rec.loss_aux1 = sum_aux1 / total;
    rec.loss_aux2 = sum_aux2 / total;
    rec.train_accuracy = static_cast<double>(correct) / total;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace mermix
