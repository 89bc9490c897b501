#ifndef MERMIX_DATA_IO_HPP
#define MERMIX_DATA_IO_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mermix/tensor.hpp"

namespace mermix {

enum class Modality : std::uint8_t { audio = 0, text = 1 };

inline constexpr int kNumSessions = 5;

/// One utterance: paired audio and text feature sequences (T x C each).
struct Utterance {
  std::string id;
  int session = 1;
  int emotion = 0;
  Matrix audio;
  Matrix text;

  bool operator==(const Utterance&) const = default;
};

struct Dataset {
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
  // Highest emotion label + 1; 0 for an empty dataset.
  int num_emotions() const;
  // Shared C of every sequence; 0 for an empty dataset.
  Index feature_dim() const;

  bool operator==(const Dataset&) const = default;
};

struct DatasetMeta {
  int num_emotions = 0;
  std::vector<std::string> class_names;
  std::vector<int> sessions;
  std::vector<std::size_t> class_counts;
};

/// Class names for the merged 4-class scheme (excited folded into happy).
inline constexpr std::array<std::string_view, 4> kEmotionNames{"angry", "happy", "sad", "neutral"};

std::string emotion_name(int label, int num_emotions);
DatasetMeta describe(const Dataset& data, int num_emotions = 0);

// ---------------------------------------------------------------------------
// MEF1 container.
//
//   "MEF1" | u8 endianness (1 = little) | u32 record count
//   per record: u16 id length | id bytes | u8 session | u8 emotion |
//               u8 modality | u32 T | u32 C | T*C float32, row-major
//
// All integers little-endian.

inline constexpr std::uint8_t kLittleEndianTag = 1;

struct FeatureRecord {
  std::string utterance_id;
  std::uint8_t session = 1;
  std::uint8_t emotion = 0;
  Modality modality = Modality::audio;
  MatrixX<float> values;

  bool operator==(const FeatureRecord&) const = default;
};

std::vector<FeatureRecord> decode_records(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_records(std::span<const FeatureRecord> records);

/// Pairs audio/text records into utterances; rejects orphans, duplicates and
/// label/session/C disagreement.
Dataset assemble_dataset(std::span<const FeatureRecord> records);
/// Audio record then text record per utterance, in dataset order.
std::vector<FeatureRecord> flatten_dataset(const Dataset& data);

Dataset read_features(const std::filesystem::path& path);
void write_features(const Dataset& data, const std::filesystem::path& path);
std::vector<FeatureRecord> read_feature_records(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Named tensor container used for checkpoints.
//
//   "MEP1" | u8 endianness | u32 header length | header bytes (key=value lines)
//   | u32 tensor count | per tensor: u16 name length | name | u32 rows |
//   u32 cols | rows*cols float64, row-major

struct NamedMatrix {
  std::string name;
  Matrix value;
};

struct TensorArchive {
  std::string header;
  std::vector<NamedMatrix> tensors;
};

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
TensorArchive decode_archive(std::span<const std::uint8_t> bytes);
void write_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_archive(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(std::span<const std::uint8_t> bytes, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic data.

enum class SynthMode { additive, xor_bits };

struct SynthConfig {
  int num_emotions = 4;
  int feature_dim = 8;
  int min_steps = 4;
  int max_steps = 8;
  double audio_signal = 1.0;  // s_a
  double text_signal = 1.0;   // s_t
  double noise = 0.5;         // sigma
  int per_class_per_session = 10;
  SynthMode mode = SynthMode::additive;

  void validate() const;
};

/// Unit directions a generated dataset is built from.
///
/// additive: row c of audio/text is the class mean direction mu_c.
/// xor_bits: rows are {bit, phase, bit*phase} directions for that modality.
/// Frame j of a modality carrying bit sign b and frame phase p (both +-1) is
///   s*b*d0 + p*d1 + s*b*p*d2 + sigma*eps
/// so the bit is visible in the pooled mean and, through the phase-aligned
/// product term, to attention that can select frames by phase.
struct SynthDirections {
  Matrix audio;
  Matrix text;
};

SynthDirections synth_directions(const SynthConfig& cfg, std::uint64_t seed);

/// xor_bits latent bits for class c and within-class index i: class 0 takes
/// (0,0),(1,1), class 1 takes (0,1),(1,0), alternating.
std::array<int, 2> xor_bits_for(int emotion, int index);

Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Leave-one-session-out folds.

struct Fold {
  int session = 0;  // held-out session
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

std::array<Fold, kNumSessions> split_by_session(const Dataset& data);

}  // namespace mermix

#endif  // MERMIX_DATA_IO_HPP
