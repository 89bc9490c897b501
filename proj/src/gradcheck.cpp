#include "mermix/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mermix/aux_tasks.hpp"
#include "mermix/trainer.hpp"

namespace mermix {

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  const FusionConfig& cfg = opts.model;
  cfg.validate();
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> steps(1, opts.max_steps);
  std::uniform_int_distribution<int> label(0, cfg.num_emotions - 1);

  // Random utterances; two per class so aux2 always has a donor.
  Dataset data;
  const int n = std::max(opts.batch_size, 2 * cfg.num_emotions);
  for (int i = 0; i < n; ++i) {
    Utterance u;
    u.id = "g" + std::to_string(i);
    u.emotion = i % cfg.num_emotions;
    u.audio = Matrix::NullaryExpr(steps(rng), cfg.feature_dim, [&] { return unit(rng); });
    u.text = Matrix::NullaryExpr(steps(rng), cfg.feature_dim, [&] { return unit(rng); });
    data.utterances.push_back(std::move(u));
  }
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::size_t> picked(all.begin(), all.begin() + opts.batch_size);
  const Batch batch = make_batch(data, picked);
  const ClassPools pools = ClassPools::from(data, all, cfg.num_emotions);
  const Aux1Batch aux1 = build_aux1(batch, cfg.num_emotions, rng);
  const Aux2Batch aux2 = build_aux2(batch, data, pools, rng);

  FusionParams params = init_params(cfg, opts.seed);
  for_each_parameter(params, cfg, [&](const std::string&, Matrix& m) {
    m = Matrix::NullaryExpr(m.rows(), m.cols(), [&] { return 0.5 * unit(rng); });
  });

  TrainConfig tcfg;
  auto loss_at = [&](const FusionParams& p) {
    Tape tape;
    const auto w = bind(tape, p, cfg, false);
    return multitask_loss(w, cfg, tcfg, batch, &aux1, &aux2).total.item();
  };

  Tape tape;
  tape.set_break_softmax_grad(opts.break_grad);
  const auto w = bind(tape, params, cfg, true);
  tape.backward(multitask_loss(w, cfg, tcfg, batch, &aux1, &aux2).total);
  const FusionParams analytic = collect_gradients(w, cfg);
  std::vector<const Matrix*> analytic_list;
  for_each_parameter(analytic, cfg, [&](const std::string&, const Matrix& g) { analytic_list.push_back(&g); });

  GradcheckReport report;
  FusionParams probe = params;
  std::size_t idx = 0;
  for_each_parameter(probe, cfg, [&](const std::string& name, Matrix& m) {
    ParameterCheck check{name, static_cast<std::size_t>(m.size()), 0.0};
    const Matrix& g = *analytic_list[idx++];
    for (Index k = 0; k < m.size(); ++k) {
      const double saved = m.data()[k];
      m.data()[k] = saved + opts.step;
      const double up = loss_at(probe);
      m.data()[k] = saved - opts.step;
      const double down = loss_at(probe);
      m.data()[k] = saved;
      const double numeric = (up - down) / (2 * opts.step);
      const double a = g.data()[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.magnitude_floor});
      check.max_rel_error = std::max(check.max_rel_error, std::abs(a - numeric) / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.parameters.push_back(std::move(check));
  });
  report.passed = report.max_rel_error < opts.tolerance;
  return report;
}

}  // namespace mermix
