#include "mermix/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace mermix {

int Dataset::num_emotions() const {
  int e = 0;
  for (const auto& u : utterances) e = std::max(e, u.emotion + 1);
  return e;
}

Index Dataset::feature_dim() const { return utterances.empty() ? 0 : utterances.front().audio.cols(); }

std::string emotion_name(int label, int num_emotions) {
  if (num_emotions == static_cast<int>(kEmotionNames.size()) && label >= 0 && label < num_emotions) {
    return std::string(kEmotionNames[static_cast<std::size_t>(label)]);
  }
  return "class" + std::to_string(label);
}

DatasetMeta describe(const Dataset& data, int num_emotions) {
  DatasetMeta meta;
  meta.num_emotions = std::max(num_emotions, data.num_emotions());
  meta.class_counts.assign(static_cast<std::size_t>(meta.num_emotions), 0);
  std::set<int> sessions;
  for (const auto& u : data.utterances) {
    ++meta.class_counts[static_cast<std::size_t>(u.emotion)];
    sessions.insert(u.session);
  }
  meta.sessions.assign(sessions.begin(), sessions.end());
  for (int c = 0; c < meta.num_emotions; ++c) meta.class_names.push_back(emotion_name(c, meta.num_emotions));
  return meta;
}

namespace {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str16(const std::string& s) {
    if (s.size() > 0xFFFF) throw FormatError("string longer than 65535 bytes: " + s.substr(0, 32) + "...");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  void set_context(std::string ctx) { ctx_ = std::move(ctx); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() {
    auto b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str16() {
    const std::uint16_t n = u16();
    auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  void require(std::uint64_t n) {
    if (n > remaining()) fail("truncated: need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(ctx_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  std::span<const std::uint8_t> take(std::size_t n) {
    require(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::string ctx_ = "header";
};

void check_magic(ByteReader& r, std::string_view magic) {
  r.set_context("header");
  std::string got;
  for (std::size_t i = 0; i < magic.size(); ++i) got.push_back(static_cast<char>(r.u8()));
  if (got != magic) r.fail("bad magic, expected " + std::string(magic));
  const std::uint8_t endian = r.u8();
  if (endian != kLittleEndianTag) r.fail("unsupported endianness tag " + std::to_string(endian));
}

}  // namespace

std::vector<std::uint8_t> encode_records(std::span<const FeatureRecord> records) {
  ByteWriter w;
  w.bytes("MEF1", 4);
  w.u8(kLittleEndianTag);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    w.str16(rec.utterance_id);
    w.u8(rec.session);
    w.u8(rec.emotion);
    w.u8(static_cast<std::uint8_t>(rec.modality));
    w.u32(static_cast<std::uint32_t>(rec.values.rows()));
    w.u32(static_cast<std::uint32_t>(rec.values.cols()));
    for (Index i = 0; i < rec.values.size(); ++i) w.f32(rec.values.data()[i]);
  }
  return w.take();
}

std::vector<FeatureRecord> decode_records(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, "MEF1");
  const std::uint32_t count = r.u32();
  std::vector<FeatureRecord> out;
  std::set<std::pair<std::string, int>> keys;
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("record " + std::to_string(i));
    FeatureRecord rec;
    rec.utterance_id = r.str16();
    if (rec.utterance_id.empty()) r.fail("empty utterance id");
    rec.session = r.u8();
    if (rec.session < 1 || rec.session > kNumSessions) r.fail("session " + std::to_string(rec.session) + " outside 1..5");
    rec.emotion = r.u8();
    const std::uint8_t modality = r.u8();
    if (modality > 1) r.fail("modality " + std::to_string(modality) + " is neither audio(0) nor text(1)");
    rec.modality = static_cast<Modality>(modality);
    const std::uint32_t steps = r.u32();
    const std::uint32_t dim = r.u32();
    if (steps == 0 || dim == 0) r.fail("empty feature matrix " + std::to_string(steps) + "x" + std::to_string(dim));
    r.require(std::uint64_t{steps} * dim * 4);
    rec.values.resize(steps, dim);
    for (Index k = 0; k < rec.values.size(); ++k) rec.values.data()[k] = r.f32();
    if (!keys.emplace(rec.utterance_id, modality).second) {
      r.fail("duplicate key (" + rec.utterance_id + ", " + (modality == 0 ? "audio" : "text") + ")");
    }
    out.push_back(std::move(rec));
  }
  r.set_context("trailer");
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes after last record");
  return out;
}

Dataset assemble_dataset(std::span<const FeatureRecord> records) {
  struct Pending {
    const FeatureRecord* audio = nullptr;
    const FeatureRecord* text = nullptr;
    std::size_t first_index = 0;
  };
  std::map<std::string, Pending> by_id;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    auto [it, inserted] = by_id.try_emplace(rec.utterance_id);
    if (inserted) {
      it->second.first_index = i;
      order.push_back(rec.utterance_id);
    }
    auto& slot = rec.modality == Modality::audio ? it->second.audio : it->second.text;
    if (slot != nullptr) {
      throw FormatError("record " + std::to_string(i) + ": duplicate key (" + rec.utterance_id + ")");
    }
    slot = &rec;
  }
  Dataset data;
  Index dim = -1;
  for (const auto& id : order) {
    const Pending& p = by_id.at(id);
    const std::string where = "record " + std::to_string(p.first_index) + " (" + id + ")";
    if (p.audio == nullptr || p.text == nullptr) {
      throw FormatError(where + ": orphan modality, missing " + (p.audio == nullptr ? "audio" : "text"));
    }
    if (p.audio->emotion != p.text->emotion || p.audio->session != p.text->session) {
      throw FormatError(where + ": audio and text disagree on emotion/session");
    }
    if (dim < 0) dim = p.audio->values.cols();
    if (p.audio->values.cols() != dim || p.text->values.cols() != dim) {
      throw FormatError(where + ": feature dimension differs from " + std::to_string(dim));
    }
    Utterance u;
    u.id = id;
    u.session = p.audio->session;
    u.emotion = p.audio->emotion;
    u.audio = p.audio->values.cast<double>();
    u.text = p.text->values.cast<double>();
    data.utterances.push_back(std::move(u));
  }
  return data;
}

std::vector<FeatureRecord> flatten_dataset(const Dataset& data) {
  std::vector<FeatureRecord> out;
  out.reserve(2 * data.size());
  for (const auto& u : data.utterances) {
    if (u.session < 1 || u.session > kNumSessions) {
      throw DatasetError(u.id + ": session " + std::to_string(u.session) + " outside 1..5");
    }
    if (u.emotion < 0 || u.emotion > 255) throw DatasetError(u.id + ": emotion label does not fit u8");
    for (Modality m : {Modality::audio, Modality::text}) {
      FeatureRecord rec;
      rec.utterance_id = u.id;
      rec.session = static_cast<std::uint8_t>(u.session);
      rec.emotion = static_cast<std::uint8_t>(u.emotion);
      rec.modality = m;
      rec.values = (m == Modality::audio ? u.audio : u.text).cast<float>();
      out.push_back(std::move(rec));
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(std::span<const std::uint8_t> bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<FeatureRecord> read_feature_records(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_records(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Dataset read_features(const std::filesystem::path& path) {
  const auto records = read_feature_records(path);
  try {
    return assemble_dataset(records);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_features(const Dataset& data, const std::filesystem::path& path) {
  const auto records = flatten_dataset(data);
  write_file_bytes(encode_records(records), path);
}

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  ByteWriter w;
  w.bytes("MEP1", 4);
  w.u8(kLittleEndianTag);
  w.u32(static_cast<std::uint32_t>(archive.header.size()));
  w.bytes(archive.header.data(), archive.header.size());
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& t : archive.tensors) {
    w.str16(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    for (Index i = 0; i < t.value.size(); ++i) w.f64(t.value.data()[i]);
  }
  return w.take();
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, "MEP1");
  TensorArchive archive;
  const std::uint32_t header_len = r.u32();
  r.require(header_len);
  for (std::uint32_t i = 0; i < header_len; ++i) archive.header.push_back(static_cast<char>(r.u8()));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("tensor " + std::to_string(i));
    NamedMatrix t;
    t.name = r.str16();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    r.require(std::uint64_t{rows} * cols * 8);
    t.value.resize(rows, cols);
    for (Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = r.f64();
    archive.tensors.push_back(std::move(t));
  }
  r.set_context("trailer");
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes");
  return archive;
}

void write_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  write_file_bytes(encode_archive(archive), path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_archive(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void SynthConfig::validate() const {
  if (num_emotions < 2) throw ConfigError("synth: num_emotions must be >= 2");
  if (feature_dim < 1) throw ConfigError("synth: feature_dim must be >= 1");
  if (min_steps < 1 || max_steps < min_steps) throw ConfigError("synth: need 1 <= min_steps <= max_steps");
  if (audio_signal < 0 || audio_signal > 1 || text_signal < 0 || text_signal > 1) {
    throw ConfigError("synth: informativeness s_a, s_t must lie in [0, 1]");
  }
  if (!(noise > 0)) throw ConfigError("synth: noise sigma must be > 0");
  if (per_class_per_session < 1) throw ConfigError("synth: per_class_per_session must be >= 1");
  if (mode == SynthMode::additive && feature_dim < num_emotions) {
    throw ConfigError("synth: additive mode needs feature_dim >= num_emotions for orthogonal class means");
  }
  if (mode == SynthMode::xor_bits) {
    if (num_emotions != 2) throw ConfigError("synth: xor mode is a binary task, num_emotions must be 2");
    if (feature_dim < 3) throw ConfigError("synth: xor mode needs feature_dim >= 3");
  }
}

namespace {

// Orthonormal rows (k x dim) from a seeded Gaussian draw.
Matrix orthonormal_rows(int k, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(dim, k);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, k);
  return q.transpose();
}

constexpr std::uint64_t kDirectionStream = 0x9E3779B97F4A7C15ULL;

}  // namespace

SynthDirections synth_directions(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed ^ kDirectionStream);
  const int k = cfg.mode == SynthMode::additive ? cfg.num_emotions : 3;
  SynthDirections dirs;
  dirs.audio = orthonormal_rows(k, cfg.feature_dim, rng);
  dirs.text = orthonormal_rows(k, cfg.feature_dim, rng);
  return dirs;
}

std::array<int, 2> xor_bits_for(int emotion, int index) {
  const int a = index % 2;
  return {a, a ^ emotion};
}

Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const SynthDirections dirs = synth_directions(cfg, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> steps(cfg.min_steps, cfg.max_steps);
  std::bernoulli_distribution coin(0.5);
  const Index dim = cfg.feature_dim;

  auto frames = [&](const Matrix& d, int emotion, int bit, double signal) {
    const int t = steps(rng);
    Matrix x(t, dim);
    for (int j = 0; j < t; ++j) {
      Eigen::RowVectorXd row(dim);
      for (Index k = 0; k < dim; ++k) row(k) = cfg.noise * normal(rng);
      if (cfg.mode == SynthMode::additive) {
        row += signal * d.row(emotion);
      } else {
        const double b = bit ? 1.0 : -1.0;
        const double p = coin(rng) ? 1.0 : -1.0;
        row += signal * b * d.row(0) + p * d.row(1) + signal * b * p * d.row(2);
      }
      x.row(j) = row;
    }
    // Stored as float32 on disk; round now so memory matches the file.
    return Matrix(x.cast<float>().cast<double>());
  };

  Dataset data;
  for (int session = 1; session <= kNumSessions; ++session) {
    for (int c = 0; c < cfg.num_emotions; ++c) {
      for (int i = 0; i < cfg.per_class_per_session; ++i) {
        Utterance u;
        std::ostringstream id;
        id << "S" << session << "_c" << c << "_" << i;
        u.id = id.str();
        u.session = session;
        u.emotion = c;
        const auto bits = xor_bits_for(c, i);
        u.audio = frames(dirs.audio, c, bits[0], cfg.audio_signal);
        u.text = frames(dirs.text, c, bits[1], cfg.text_signal);
        data.utterances.push_back(std::move(u));
      }
    }
  }
  return data;
}

std::array<Fold, kNumSessions> split_by_session(const Dataset& data) {
  std::array<Fold, kNumSessions> folds;
  std::array<std::size_t, kNumSessions> seen{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int s = data.utterances[i].session;
    if (s < 1 || s > kNumSessions) {
      throw ConfigError(data.utterances[i].id + ": session " + std::to_string(s) + " outside 1..5");
    }
    ++seen[static_cast<std::size_t>(s - 1)];
  }
  for (int s = 1; s <= kNumSessions; ++s) {
    if (seen[static_cast<std::size_t>(s - 1)] == 0) {
      throw ConfigError("session " + std::to_string(s) + " has no utterances; leave-one-session-out needs 1..5");
    }
  }
  for (int k = 0; k < kNumSessions; ++k) {
    Fold& f = folds[static_cast<std::size_t>(k)];
    f.session = k + 1;
    for (std::size_t i = 0; i < data.size(); ++i) {
      (data.utterances[i].session == f.session ? f.test : f.train).push_back(i);
    }
  }
  return folds;
}

}  // namespace mermix
