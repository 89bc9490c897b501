#ifndef MERMIX_AUX_TASKS_HPP
#define MERMIX_AUX_TASKS_HPP

#include <random>
#include <utility>
#include <vector>

#include "mermix/data_io.hpp"
#include "mermix/fusion_model.hpp"

namespace mermix {

/// label_a * E + label_t: a bijection [0,E) x [0,E) -> [0,E^2).
int combined_label(int label_a, int label_t, int num_emotions);
/// Inverse of combined_label: {label_a, label_t}.
std::pair<int, int> split_combined_label(int combined, int num_emotions);

/// Audio kept in place, text taken from sample permutation[i].
struct Aux1Batch {
  Batch batch;  // batch.labels hold the combined labels
  std::vector<std::size_t> permutation;
};

/// Recombines audio i with text pi(i) for a uniformly random permutation pi
/// (fixed points allowed).
Aux1Batch build_aux1(const Batch& batch, int num_emotions, std::mt19937_64& rng);

/// Training-split dataset indices grouped by emotion class.
struct ClassPools {
  std::vector<std::vector<std::size_t>> by_class;

  static ClassPools from(const Dataset& data, std::span<const std::size_t> indices, int num_emotions);
};

struct Aux2Batch {
  Batch batch;                        // labels unchanged
  std::vector<Modality> replaced;     // which modality was swapped per sample
  std::vector<std::size_t> donors;    // dataset index the replacement came from (self on fallback)
};

/// Per sample: a fair coin picks audio or text, which is replaced by the same
/// modality of a uniformly drawn same-class donor other than the sample itself.
/// A pool holding only the sample leaves it unchanged. Needs batch.sources.
Aux2Batch build_aux2(const Batch& batch, const Dataset& data, const ClassPools& pools, std::mt19937_64& rng);

}  // namespace mermix

#endif  // MERMIX_AUX_TASKS_HPP
