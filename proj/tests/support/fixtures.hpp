#ifndef MERMIX_TESTS_FIXTURES_HPP
#define MERMIX_TESTS_FIXTURES_HPP

#include <random>
#include <vector>

#include "mermix/data_io.hpp"
#include "mermix/fusion_model.hpp"
#include "support/oracles.hpp"

namespace fixture {

using namespace mermix;

inline FusionConfig tiny_config(int layers = 1, bool output_projection = true) {
  FusionConfig cfg;
  cfg.feature_dim = 8;
  cfg.num_heads = 2;
  cfg.num_layers = layers;
  cfg.num_emotions = 4;
  cfg.use_output_projection = output_projection;
  return cfg;
}

/// Init plus random non-zero heads and biases, so every parameter shapes the output.
inline FusionParams random_params(const FusionConfig& cfg, std::uint64_t seed) {
  FusionParams p = init_params(cfg, seed);
  std::mt19937_64 rng(seed ^ 0xabcdefULL);
  for_each_parameter(p, cfg, [&](const std::string&, Matrix& m) {
    m += oracle::random_matrix(m.rows(), m.cols(), rng, -0.3, 0.3);
  });
  return p;
}

/// Unpadded random sequences with lengths in [1, max_steps].
inline Batch random_batch(const FusionConfig& cfg, std::size_t b, int max_steps, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, max_steps);
  std::uniform_int_distribution<int> label(0, cfg.num_emotions - 1);
  std::vector<Matrix> audio, text;
  std::vector<int> labels;
  for (std::size_t i = 0; i < b; ++i) {
    audio.push_back(oracle::random_matrix(len(rng), cfg.feature_dim, rng));
    text.push_back(oracle::random_matrix(len(rng), cfg.feature_dim, rng));
    labels.push_back(label(rng));
  }
  return pad_batch(std::move(audio), std::move(text), std::move(labels));
}

struct Outputs {
  Matrix embedding;
  Matrix main_logits;
  Matrix aux1_logits;
};

inline Outputs outputs(const FusionParams& p, const FusionConfig& cfg, const Batch& batch) {
  Tape tape;
  const auto w = bind(tape, p, cfg, false);
  const FusionOutput out = forward(w, cfg, batch);
  return {out.embedding.value(), out.main_logits.value(), out.aux1_logits.value()};
}

inline double max_abs_diff(const Outputs& a, const Outputs& b) {
  return std::max({(a.embedding - b.embedding).cwiseAbs().maxCoeff(),
                   (a.main_logits - b.main_logits).cwiseAbs().maxCoeff(),
                   (a.aux1_logits - b.aux1_logits).cwiseAbs().maxCoeff()});
}

/// Mean over valid rows of each sample, concatenated [audio, text].
inline Matrix pooled_concat(const Batch& batch) {
  const Index c = batch.audio.front().cols();
  Matrix out(static_cast<Index>(batch.size()), 2 * c);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto pool = [&](const Matrix& x, const StepMask& mask) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(c);
      double n = 0;
      for (Index j = 0; j < x.rows(); ++j) {
        if (!mask[static_cast<std::size_t>(j)]) continue;
        acc += x.row(j);
        n += 1;
      }
      return Eigen::RowVectorXd(acc / n);
    };
    out.row(static_cast<Index>(i)) << pool(batch.audio[i], batch.audio_mask[i]), pool(batch.text[i], batch.text_mask[i]);
  }
  return out;
}

inline void zero_value_and_output(FusionParams& p) {
  for (auto& layer : p.layers) {
    for (auto* a : {&layer.audio_from_text, &layer.text_from_audio}) {
      a->w_v.setZero();
      a->b_v.setZero();
      if (a->w_o.size() > 0) a->w_o.setZero();
      if (a->b_o.size() > 0) a->b_o.setZero();
    }
  }
}

/// Small labelled dataset with `per_class` utterances per class in every session.
inline Dataset random_dataset(int num_emotions, int feature_dim, int per_class, int max_steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(1, max_steps);
  Dataset d;
  for (int s = 1; s <= kNumSessions; ++s) {
    for (int c = 0; c < num_emotions; ++c) {
      for (int i = 0; i < per_class; ++i) {
        Utterance u;
        u.id = "R" + std::to_string(s) + "_" + std::to_string(c) + "_" + std::to_string(i);
        u.session = s;
        u.emotion = c;
        u.audio = oracle::random_matrix(len(rng), feature_dim, rng);
        u.text = oracle::random_matrix(len(rng), feature_dim, rng);
        d.utterances.push_back(std::move(u));
      }
    }
  }
  return d;
}

}  // namespace fixture

#endif  // MERMIX_TESTS_FIXTURES_HPP
