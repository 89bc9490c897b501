#include "mermix/aux_tasks.hpp"

#include <algorithm>
#include <numeric>

namespace mermix {

int combined_label(int label_a, int label_t, int num_emotions) {
  if (label_a < 0 || label_a >= num_emotions || label_t < 0 || label_t >= num_emotions) {
    throw LabelError("combined_label: labels (" + std::to_string(label_a) + ", " + std::to_string(label_t) +
                     ") outside [0, " + std::to_string(num_emotions) + ")");
  }
  return label_a * num_emotions + label_t;
}

std::pair<int, int> split_combined_label(int combined, int num_emotions) {
  if (combined < 0 || combined >= num_emotions * num_emotions) {
    throw LabelError("split_combined_label: " + std::to_string(combined) + " outside [0, E^2)");
  }
  return {combined / num_emotions, combined % num_emotions};
}

namespace {

// Strips batch padding so sequences can be re-padded after mixing samples.
Matrix valid_rows(const Matrix& x, const StepMask& mask) {
  const auto n = std::count(mask.begin(), mask.end(), true);
  Matrix out(n, x.cols());
  Index r = 0;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j]) out.row(r++) = x.row(static_cast<Index>(j));
  }
  return out;
}

}  // namespace

Aux1Batch build_aux1(const Batch& batch, int num_emotions, std::mt19937_64& rng) {
  const std::size_t n = batch.size();
  if (n == 0) throw ConfigError("build_aux1: empty batch");
  Aux1Batch out;
  out.permutation.resize(n);
  std::iota(out.permutation.begin(), out.permutation.end(), std::size_t{0});
  std::shuffle(out.permutation.begin(), out.permutation.end(), rng);

  out.batch = batch;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = out.permutation[i];
    out.batch.text[i] = batch.text[src];
    out.batch.text_mask[i] = batch.text_mask[src];
    out.batch.labels[i] = combined_label(batch.labels[i], batch.labels[src], num_emotions);
  }
  return out;
}

ClassPools ClassPools::from(const Dataset& data, std::span<const std::size_t> indices, int num_emotions) {
  ClassPools pools;
  pools.by_class.resize(static_cast<std::size_t>(num_emotions));
  for (std::size_t i : indices) {
    const int e = data.utterances.at(i).emotion;
    if (e < 0 || e >= num_emotions) throw LabelError("emotion " + std::to_string(e) + " outside [0, E)");
    pools.by_class[static_cast<std::size_t>(e)].push_back(i);
  }
  return pools;
}

Aux2Batch build_aux2(const Batch& batch, const Dataset& data, const ClassPools& pools, std::mt19937_64& rng) {
  const std::size_t n = batch.size();
  if (batch.sources.size() != n) throw ConfigError("build_aux2: batch has no dataset sources");
  std::bernoulli_distribution coin(0.5);
  Aux2Batch out;
  std::vector<Matrix> audio, text;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = batch.labels[i];
    const std::size_t self = batch.sources[i];
    if (label < 0 || static_cast<std::size_t>(label) >= pools.by_class.size() ||
        pools.by_class[static_cast<std::size_t>(label)].empty()) {
      throw DatasetError("build_aux2: empty donor pool for class " + std::to_string(label));
    }
    const auto& pool = pools.by_class[static_cast<std::size_t>(label)];
    const Modality which = coin(rng) ? Modality::text : Modality::audio;

    const auto self_pos = std::find(pool.begin(), pool.end(), self);
    const std::size_t candidates = pool.size() - (self_pos != pool.end() ? 1 : 0);
    std::size_t donor = self;
    if (candidates > 0) {
      std::uniform_int_distribution<std::size_t> pick(0, candidates - 1);
      std::size_t k = pick(rng);
      if (self_pos != pool.end() && k >= static_cast<std::size_t>(self_pos - pool.begin())) ++k;
      donor = pool[k];
    }
    const Utterance& d = data.utterances.at(donor);
    if (d.emotion != label) throw DatasetError("build_aux2: donor pool mixes classes");

    Matrix a = valid_rows(batch.audio[i], batch.audio_mask[i]);
    Matrix t = valid_rows(batch.text[i], batch.text_mask[i]);
    if (donor != self) (which == Modality::audio ? a : t) = which == Modality::audio ? d.audio : d.text;
    audio.push_back(std::move(a));
    text.push_back(std::move(t));
    out.replaced.push_back(which);
    out.donors.push_back(donor);
  }
  out.batch = pad_batch(std::move(audio), std::move(text), batch.labels, batch.sources);
  return out;
}

}  // namespace mermix
