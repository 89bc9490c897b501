#ifndef MERMIX_FUSION_MODEL_HPP
#define MERMIX_FUSION_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mermix/data_io.hpp"
#include "mermix/tensor.hpp"

namespace mermix {

enum class FusionKind { cross_attention, concat_fc };
enum class ModalityUse { audio, text, both };

std::string to_string(FusionKind kind);
std::string to_string(ModalityUse use);
FusionKind parse_fusion_kind(const std::string& s);
ModalityUse parse_modality_use(const std::string& s);

struct FusionConfig {
  int feature_dim = 768;  // C
  int num_heads = 8;      // H
  int num_layers = 1;     // K
  int num_emotions = 4;   // E
  bool use_output_projection = true;
  double dropout_rate = 0.0;  // attention weights only
  FusionKind fusion = FusionKind::cross_attention;
  ModalityUse modality = ModalityUse::both;

  int head_dim() const { return feature_dim / num_heads; }
  // Width of the fusion embedding fed to the heads: 2C, or C for one modality.
  int embedding_dim() const { return modality == ModalityUse::both ? 2 * feature_dim : feature_dim; }
  int num_combined_labels() const { return num_emotions * num_emotions; }

  void validate() const;
  bool operator==(const FusionConfig&) const = default;
};

/// Flat key=value lines, one per field.
std::string to_kv(const FusionConfig& cfg);
FusionConfig fusion_config_from_kv(const std::string& text);

// Biases are stored as 1 x n rows.
template <typename T>
struct AttentionWeights {
  T w_q, b_q, w_k, b_k, w_v, b_v;
  T w_o, b_o;  // present iff use_output_projection
};

template <typename T>
struct CrossLayerWeights {
  AttentionWeights<T> audio_from_text;  // audio queries, text keys/values
  AttentionWeights<T> text_from_audio;  // text queries, audio keys/values
};

template <typename T>
struct FusionWeights {
  std::vector<CrossLayerWeights<T>> layers;  // cross_attention only
  T fc_w, fc_b;                              // concat_fc only
  T cls_w, cls_b;                            // embedding -> E
  T aux_w, aux_b;                            // embedding -> E^2
};

using FusionParams = FusionWeights<Matrix>;

/// Visits every parameter present under `cfg` in a fixed order, as
/// f(name, member). Works for const and non-const weights of any element type.
template <typename W, typename F>
void for_each_parameter(W& w, const FusionConfig& cfg, F&& f) {
  auto attention = [&](const std::string& prefix, auto& a) {
    f(prefix + ".w_q", a.w_q);
    f(prefix + ".b_q", a.b_q);
    f(prefix + ".w_k", a.w_k);
    f(prefix + ".b_k", a.b_k);
    f(prefix + ".w_v", a.w_v);
    f(prefix + ".b_v", a.b_v);
    if (cfg.use_output_projection) {
      f(prefix + ".w_o", a.w_o);
      f(prefix + ".b_o", a.b_o);
    }
  };
  if (cfg.fusion == FusionKind::cross_attention) {
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l);
      attention(p + ".audio_from_text", w.layers[l].audio_from_text);
      attention(p + ".text_from_audio", w.layers[l].text_from_audio);
    }
  } else {
    f(std::string("fc.w"), w.fc_w);
    f(std::string("fc.b"), w.fc_b);
  }
  f(std::string("cls.w"), w.cls_w);
  f(std::string("cls.b"), w.cls_b);
  f(std::string("aux1.w"), w.aux_w);
  f(std::string("aux1.b"), w.aux_b);
}

/// Xavier-uniform projections, zero biases, zero classifier heads.
FusionParams init_params(const FusionConfig& cfg, std::uint64_t seed);
FusionParams zeros_like(const FusionParams& params, const FusionConfig& cfg);
std::size_t parameter_count(const FusionConfig& cfg);
std::size_t parameter_count(const FusionParams& params, const FusionConfig& cfg);

/// Places every parameter on `tape` as a leaf.
FusionWeights<Tensor> bind(Tape& tape, const FusionParams& params, const FusionConfig& cfg,
                           bool requires_grad = true);
/// Gradients of bound leaves after backward(), laid out like the parameters.
FusionParams collect_gradients(const FusionWeights<Tensor>& bound, const FusionConfig& cfg);

void save_checkpoint(const FusionParams& params, const FusionConfig& cfg, const std::filesystem::path& path);
struct Checkpoint {
  FusionConfig config;
  FusionParams params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

using StepMask = std::vector<bool>;

/// B samples; each modality padded to a batch-wide length, true = valid step.
struct Batch {
  std::vector<Matrix> audio;
  std::vector<Matrix> text;
  std::vector<StepMask> audio_mask;
  std::vector<StepMask> text_mask;
  std::vector<int> labels;
  std::vector<std::size_t> sources;  // dataset index per sample, if any

  std::size_t size() const { return labels.size(); }
  void validate(Index feature_dim) const;
};

/// Pads unpadded per-sample sequences to the longest per modality.
Batch pad_batch(std::vector<Matrix> audio, std::vector<Matrix> text, std::vector<int> labels,
                std::vector<std::size_t> sources = {});
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

/// Multi-head scaled dot-product attention from `queries_from` onto
/// `keys_values_from`, plus the residual. Masked keys get zero weight.
Tensor cross_attention_block(const Tensor& queries_from, const Tensor& keys_values_from,
                             const AttentionWeights<Tensor>& w, const StepMask& kv_mask, const FusionConfig& cfg,
                             const ForwardOptions& opts = {});

/// Mean over the valid rows of x, as a 1 x cols row.
Tensor masked_mean_rows(const Tensor& x, const StepMask& mask);

/// (B x embedding_dim) fusion embedding.
Tensor fuse(const FusionWeights<Tensor>& w, const FusionConfig& cfg, const Batch& batch,
            const ForwardOptions& opts = {});
Tensor main_head(const FusionWeights<Tensor>& w, const Tensor& embedding);
Tensor aux1_head(const FusionWeights<Tensor>& w, const Tensor& embedding);

struct FusionOutput {
  Tensor embedding;
  Tensor main_logits;
  Tensor aux1_logits;
};

FusionOutput forward(const FusionWeights<Tensor>& w, const FusionConfig& cfg, const Batch& batch,
                     const ForwardOptions& opts = {});

/// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Matrix& logits);

/// Main-head class predictions without gradient tracking.
std::vector<int> predict(const FusionParams& params, const FusionConfig& cfg, const Batch& batch);

}  // namespace mermix

#endif  // MERMIX_FUSION_MODEL_HPP
