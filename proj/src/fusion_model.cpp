#include "mermix/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace mermix {

std::string to_string(FusionKind kind) { return kind == FusionKind::cross_attention ? "ca" : "fc"; }

std::string to_string(ModalityUse use) {
  switch (use) {
    case ModalityUse::audio:
      return "audio";
    case ModalityUse::text:
      return "text";
    case ModalityUse::both:
      return "both";
  }
  return "both";
}

FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "ca") return FusionKind::cross_attention;
  if (s == "fc") return FusionKind::concat_fc;
  throw ConfigError("unknown fusion '" + s + "', expected ca or fc");
}

ModalityUse parse_modality_use(const std::string& s) {
  if (s == "audio") return ModalityUse::audio;
  if (s == "text") return ModalityUse::text;
  if (s == "both") return ModalityUse::both;
  throw ConfigError("unknown modality '" + s + "', expected audio, text or both");
}

void FusionConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (num_heads < 1 || feature_dim % num_heads != 0) {
    throw ConfigError("feature_dim " + std::to_string(feature_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (num_emotions < 2) throw ConfigError("num_emotions must be >= 2");
  if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (fusion == FusionKind::cross_attention && modality != ModalityUse::both) {
    throw ConfigError("cross-attention fusion needs both modalities");
  }
}

std::string to_kv(const FusionConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "feature_dim=" << cfg.feature_dim << "\n"
     << "num_heads=" << cfg.num_heads << "\n"
     << "num_layers=" << cfg.num_layers << "\n"
     << "num_emotions=" << cfg.num_emotions << "\n"
     << "use_output_projection=" << (cfg.use_output_projection ? "true" : "false") << "\n"
     << "dropout_rate=" << cfg.dropout_rate << "\n"
     << "fusion=" << to_string(cfg.fusion) << "\n"
     << "modality=" << to_string(cfg.modality) << "\n";
  return os.str();
}

FusionConfig fusion_config_from_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("config missing key ") + key);
    return it->second;
  };
  FusionConfig cfg;
  try {
    cfg.feature_dim = std::stoi(get("feature_dim"));
    cfg.num_heads = std::stoi(get("num_heads"));
    cfg.num_layers = std::stoi(get("num_layers"));
    cfg.num_emotions = std::stoi(get("num_emotions"));
    cfg.use_output_projection = get("use_output_projection") == "true";
    cfg.dropout_rate = std::stod(get("dropout_rate"));
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("bad config value: ") + e.what());
  }
  cfg.fusion = parse_fusion_kind(get("fusion"));
  cfg.modality = parse_modality_use(get("modality"));
  cfg.validate();
  return cfg;
}

namespace {

Matrix xavier(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix w(fan_in, fan_out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

AttentionWeights<Matrix> init_attention(const FusionConfig& cfg, std::mt19937_64& rng) {
  const Index c = cfg.feature_dim;
  AttentionWeights<Matrix> a;
  a.w_q = xavier(c, c, rng);
  a.b_q = Matrix::Zero(1, c);
  a.w_k = xavier(c, c, rng);
  a.b_k = Matrix::Zero(1, c);
  a.w_v = xavier(c, c, rng);
  a.b_v = Matrix::Zero(1, c);
  if (cfg.use_output_projection) {
    a.w_o = xavier(c, c, rng);
    a.b_o = Matrix::Zero(1, c);
  }
  return a;
}

}  // namespace

FusionParams init_params(const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  FusionParams p;
  const Index emb = cfg.embedding_dim();
  if (cfg.fusion == FusionKind::cross_attention) {
    for (int l = 0; l < cfg.num_layers; ++l) {
      CrossLayerWeights<Matrix> layer;
      layer.audio_from_text = init_attention(cfg, rng);
      layer.text_from_audio = init_attention(cfg, rng);
      p.layers.push_back(std::move(layer));
    }
  } else {
    p.fc_w = xavier(emb, emb, rng);
    p.fc_b = Matrix::Zero(1, emb);
  }
  p.cls_w = Matrix::Zero(emb, cfg.num_emotions);
  p.cls_b = Matrix::Zero(1, cfg.num_emotions);
  p.aux_w = Matrix::Zero(emb, cfg.num_combined_labels());
  p.aux_b = Matrix::Zero(1, cfg.num_combined_labels());
  return p;
}

FusionParams zeros_like(const FusionParams& params, const FusionConfig& cfg) {
  FusionParams z = params;
  for_each_parameter(z, cfg, [](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

std::size_t parameter_count(const FusionParams& params, const FusionConfig& cfg) {
  std::size_t n = 0;
  for_each_parameter(params, cfg, [&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

std::size_t parameter_count(const FusionConfig& cfg) {
  cfg.validate();
  const std::size_t c = static_cast<std::size_t>(cfg.feature_dim);
  const std::size_t emb = static_cast<std::size_t>(cfg.embedding_dim());
  const std::size_t e = static_cast<std::size_t>(cfg.num_emotions);
  std::size_t n = 0;
  if (cfg.fusion == FusionKind::cross_attention) {
    const std::size_t per_branch = (cfg.use_output_projection ? 4 : 3) * (c * c + c);
    n += static_cast<std::size_t>(cfg.num_layers) * 2 * per_branch;
  } else {
    n += emb * emb + emb;
  }
  n += emb * e + e;
  n += emb * e * e + e * e;
  return n;
}

FusionWeights<Tensor> bind(Tape& tape, const FusionParams& params, const FusionConfig& cfg, bool requires_grad) {
  FusionWeights<Tensor> w;
  w.layers.resize(params.layers.size());
  // Walk both structures in lockstep; for_each_parameter visits them in the same order.
  std::vector<const Matrix*> sources;
  for_each_parameter(params, cfg, [&](const std::string&, const Matrix& m) { sources.push_back(&m); });
  std::size_t i = 0;
  for_each_parameter(w, cfg, [&](const std::string&, Tensor& t) { t = tape.leaf(*sources[i++], requires_grad); });
  return w;
}

FusionParams collect_gradients(const FusionWeights<Tensor>& bound, const FusionConfig& cfg) {
  FusionParams g;
  g.layers.resize(bound.layers.size());
  std::vector<const Tensor*> leaves;
  for_each_parameter(bound, cfg, [&](const std::string&, const Tensor& t) { leaves.push_back(&t); });
  std::size_t i = 0;
  for_each_parameter(g, cfg, [&](const std::string&, Matrix& m) {
    const Tensor& t = *leaves[i++];
    m = t.grad().size() == 0 ? Matrix(Matrix::Zero(t.rows(), t.cols())) : t.grad();
  });
  return g;
}

void save_checkpoint(const FusionParams& params, const FusionConfig& cfg, const std::filesystem::path& path) {
  TensorArchive archive;
  archive.header = to_kv(cfg);
  for_each_parameter(params, cfg,
                     [&](const std::string& name, const Matrix& m) { archive.tensors.push_back({name, m}); });
  write_archive(archive, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = read_archive(path);
  Checkpoint ck;
  ck.config = fusion_config_from_kv(archive.header);
  ck.params = init_params(ck.config, 0);
  std::size_t i = 0;
  for_each_parameter(ck.params, ck.config, [&](const std::string& name, Matrix& m) {
    if (i >= archive.tensors.size()) throw FormatError(path.string() + ": missing tensor " + name);
    const NamedMatrix& t = archive.tensors[i++];
    if (t.name != name || t.value.rows() != m.rows() || t.value.cols() != m.cols()) {
      throw FormatError(path.string() + ": tensor " + std::to_string(i - 1) + " is " + t.name + " " +
                        shape_string({t.value.rows(), t.value.cols()}) + ", expected " + name + " " +
                        shape_string({m.rows(), m.cols()}));
    }
    m = t.value;
  });
  if (i != archive.tensors.size()) throw FormatError(path.string() + ": unexpected extra tensors");
  return ck;
}

void Batch::validate(Index feature_dim) const {
  const std::size_t b = labels.size();
  if (b == 0) throw ConfigError("empty batch");
  if (audio.size() != b || text.size() != b || audio_mask.size() != b || text_mask.size() != b) {
    throw ConfigError("batch fields disagree on batch size");
  }
  auto check = [&](const Matrix& x, const StepMask& mask, std::size_t i, const char* what) {
    if (x.cols() != feature_dim) {
      throw ConfigError(std::string(what) + " sample " + std::to_string(i) + " has C=" + std::to_string(x.cols()) +
                        ", model expects " + std::to_string(feature_dim));
    }
    if (static_cast<Index>(mask.size()) != x.rows()) {
      throw ConfigError(std::string(what) + " mask length differs from sequence length in sample " +
                        std::to_string(i));
    }
    if (std::none_of(mask.begin(), mask.end(), [](bool v) { return v; })) {
      throw ConfigError(std::string(what) + " sample " + std::to_string(i) + " has no valid steps");
    }
  };
  for (std::size_t i = 0; i < b; ++i) {
    check(audio[i], audio_mask[i], i, "audio");
    check(text[i], text_mask[i], i, "text");
  }
}

Batch pad_batch(std::vector<Matrix> audio, std::vector<Matrix> text, std::vector<int> labels,
                std::vector<std::size_t> sources) {
  Batch b;
  auto pad = [](std::vector<Matrix>& xs, std::vector<StepMask>& masks) {
    Index longest = 0;
    for (const auto& x : xs) longest = std::max(longest, x.rows());
    for (auto& x : xs) {
      StepMask mask(static_cast<std::size_t>(longest), false);
      std::fill_n(mask.begin(), x.rows(), true);
      if (x.rows() < longest) {
        Matrix padded = Matrix::Zero(longest, x.cols());
        padded.topRows(x.rows()) = x;
        x = std::move(padded);
      }
      masks.push_back(std::move(mask));
    }
  };
  pad(audio, b.audio_mask);
  pad(text, b.text_mask);
  b.audio = std::move(audio);
  b.text = std::move(text);
  b.labels = std::move(labels);
  b.sources = std::move(sources);
  return b;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<Matrix> audio, text;
  std::vector<int> labels;
  for (std::size_t i : indices) {
    const Utterance& u = data.utterances.at(i);
    audio.push_back(u.audio);
    text.push_back(u.text);
    labels.push_back(u.emotion);
  }
  return pad_batch(std::move(audio), std::move(text), std::move(labels),
                   std::vector<std::size_t>(indices.begin(), indices.end()));
}

namespace {

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row_broadcast(x * w, b); }

// 1 x T row: 0 for valid keys, -inf for padding.
Matrix additive_mask(const StepMask& mask) {
  Matrix m(1, static_cast<Index>(mask.size()));
  for (std::size_t j = 0; j < mask.size(); ++j) {
    m(0, static_cast<Index>(j)) = mask[j] ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return m;
}

}  // namespace

Tensor masked_mean_rows(const Tensor& x, const StepMask& mask) {
  if (static_cast<Index>(mask.size()) != x.rows()) {
    throw ShapeError("masked_mean_rows: mask of " + std::to_string(mask.size()) + " for " + shape_string(x.shape()));
  }
  const auto valid = std::count(mask.begin(), mask.end(), true);
  if (valid == 0) throw ShapeError("masked_mean_rows: no valid steps");
  Matrix weights(1, x.rows());
  for (std::size_t j = 0; j < mask.size(); ++j) {
    weights(0, static_cast<Index>(j)) = mask[j] ? 1.0 / static_cast<double>(valid) : 0.0;
  }
  return x.tape().constant(std::move(weights)) * x;
}

Tensor cross_attention_block(const Tensor& queries_from, const Tensor& keys_values_from,
                             const AttentionWeights<Tensor>& w, const StepMask& kv_mask, const FusionConfig& cfg,
                             const ForwardOptions& opts) {
  const Index c = cfg.feature_dim;
  if (queries_from.cols() != c || keys_values_from.cols() != c) {
    throw ConfigError("cross attention: feature dims " + std::to_string(queries_from.cols()) + " and " +
                      std::to_string(keys_values_from.cols()) + " differ from C=" + std::to_string(c));
  }
  if (static_cast<Index>(kv_mask.size()) != keys_values_from.rows()) {
    throw ConfigError("cross attention: key mask covers " + std::to_string(kv_mask.size()) + " of " +
                      std::to_string(keys_values_from.rows()) + " steps");
  }
  if (std::none_of(kv_mask.begin(), kv_mask.end(), [](bool v) { return v; })) {
    throw ShapeError("fully masked attention row");
  }
  Tape& tape = queries_from.tape();
  const Tensor q = affine(queries_from, w.w_q, w.b_q);
  const Tensor k = affine(keys_values_from, w.w_k, w.b_k);
  const Tensor v = affine(keys_values_from, w.w_v, w.b_v);

  const bool any_masked = std::find(kv_mask.begin(), kv_mask.end(), false) != kv_mask.end();
  Tensor mask_row;
  if (any_masked) mask_row = tape.constant(additive_mask(kv_mask));

  const int heads = cfg.num_heads;
  const Index d = cfg.head_dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const bool dropout = opts.training && cfg.dropout_rate > 0.0;
  if (dropout && opts.rng == nullptr) throw ConfigError("dropout during training needs an rng");

  std::vector<Tensor> head_out;
  head_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : slice_cols(q, h * d, d);
    const Tensor kh = heads == 1 ? k : slice_cols(k, h * d, d);
    const Tensor vh = heads == 1 ? v : slice_cols(v, h * d, d);
    Tensor scores = scale(qh * transpose(kh), inv_sqrt_d);
    if (any_masked) scores = add_row_broadcast(scores, mask_row);
    Tensor attn = softmax_lastdim(scores);
    if (dropout) {
      std::bernoulli_distribution keep(1.0 - cfg.dropout_rate);
      Matrix m(attn.rows(), attn.cols());
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*opts.rng) ? 1.0 / (1.0 - cfg.dropout_rate) : 0.0;
      attn = cwise_product(attn, tape.constant(std::move(m)));
    }
    head_out.push_back(attn * vh);
  }
  Tensor mixed = heads == 1 ? head_out.front() : concat_lastdim(std::span<const Tensor>(head_out));
  if (cfg.use_output_projection) mixed = affine(mixed, w.w_o, w.b_o);
  return queries_from + mixed;
}

Tensor fuse(const FusionWeights<Tensor>& w, const FusionConfig& cfg, const Batch& batch, const ForwardOptions& opts) {
  cfg.validate();
  batch.validate(cfg.feature_dim);
  if (w.cls_w.rows() != cfg.embedding_dim()) throw ConfigError("weights do not match the fusion config");
  Tape& tape = w.cls_w.tape();
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor fa = tape.constant(batch.audio[i]);
    Tensor ft = tape.constant(batch.text[i]);
    if (cfg.fusion == FusionKind::cross_attention) {
      if (static_cast<int>(w.layers.size()) != cfg.num_layers) throw ConfigError("layer count mismatch");
      for (const auto& layer : w.layers) {
        // Both branches read the same layer input.
        Tensor next_a = cross_attention_block(fa, ft, layer.audio_from_text, batch.text_mask[i], cfg, opts);
        Tensor next_t = cross_attention_block(ft, fa, layer.text_from_audio, batch.audio_mask[i], cfg, opts);
        fa = next_a;
        ft = next_t;
      }
      rows.push_back(concat_lastdim(masked_mean_rows(fa, batch.audio_mask[i]), masked_mean_rows(ft, batch.text_mask[i])));
    } else {
      Tensor pooled;
      switch (cfg.modality) {
        case ModalityUse::audio:
          pooled = masked_mean_rows(fa, batch.audio_mask[i]);
          break;
        case ModalityUse::text:
          pooled = masked_mean_rows(ft, batch.text_mask[i]);
          break;
        case ModalityUse::both:
          pooled = concat_lastdim(masked_mean_rows(fa, batch.audio_mask[i]), masked_mean_rows(ft, batch.text_mask[i]));
          break;
      }
      rows.push_back(pooled);
    }
  }
  Tensor embedding = concat_rows(std::span<const Tensor>(rows));
  if (cfg.fusion == FusionKind::concat_fc) embedding = tanh(affine(embedding, w.fc_w, w.fc_b));
  return embedding;
}

Tensor main_head(const FusionWeights<Tensor>& w, const Tensor& embedding) { return affine(embedding, w.cls_w, w.cls_b); }

Tensor aux1_head(const FusionWeights<Tensor>& w, const Tensor& embedding) { return affine(embedding, w.aux_w, w.aux_b); }

FusionOutput forward(const FusionWeights<Tensor>& w, const FusionConfig& cfg, const Batch& batch,
                     const ForwardOptions& opts) {
  FusionOutput out;
  out.embedding = fuse(w, cfg, batch, opts);
  out.main_logits = main_head(w, out.embedding);
  out.aux1_logits = aux1_head(w, out.embedding);
  return out;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(logits.rows()));
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

std::vector<int> predict(const FusionParams& params, const FusionConfig& cfg, const Batch& batch) {
  Tape tape;
  const auto w = bind(tape, params, cfg, false);
  return argmax_rows(main_head(w, fuse(w, cfg, batch)).value());
}

}  // namespace mermix
