// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mermix/aux_tasks.hpp"
#include "mermix/eval_cv.hpp"
#include "mermix/trainer.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace mermix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS  " : "FAIL  ") << name << "  [" << o.detail << "; " << std::fixed
            << std::setprecision(1) << secs << " s]" << std::endl;
}

std::string sci(double v) {
  std::ostringstream ss;
  ss << std::scientific << std::setprecision(2) << v;
  return ss.str();
}

std::string pct(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1) << 100 * v << "%";
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t scalars = 0;
  for (bool wo : {true, false}) {
    const FusionConfig cfg = fixture::tiny_config(2, wo);
    const Dataset data = fixture::random_dataset(4, 8, 1, 4, 41);
    const std::vector<std::size_t> idx{0, 5, 10};  // B = 3
    const Batch batch = make_batch(data, idx);
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const ClassPools pools = ClassPools::from(data, all, 4);
    std::mt19937_64 rng(41);
    const Aux1Batch aux1 = build_aux1(batch, 4, rng);
    const Aux2Batch aux2 = build_aux2(batch, data, pools, rng);
    TrainConfig tcfg;
    tcfg.lambda_aux1 = 0.7;
    tcfg.lambda_aux2 = 1.3;
    const FusionParams p = fixture::random_params(cfg, 41);
    auto loss = [&](const FusionParams& q) {
      Tape t;
      return multitask_loss(bind(t, q, cfg, false), cfg, tcfg, batch, &aux1, &aux2).total.item();
    };
    Tape tape;
    const auto w = bind(tape, p, cfg, true);
    tape.backward(multitask_loss(w, cfg, tcfg, batch, &aux1, &aux2).total);
    const auto r = oracle::check_every_parameter(p, collect_gradients(w, cfg), cfg, loss);
    if (r.scalars != parameter_count(cfg)) return {false, "not every parameter was checked"};
    worst = std::max(worst, r.max_rel_error);
    scalars += r.scalars;
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 60,
          std::to_string(scalars) + " scalars, max rel err " + sci(worst) + " (< 1e-4), " + sci(secs) + " s (< 60)"};
}

Outcome residual_identity() {
  std::mt19937_64 rng(7);
  double worst = 0;
  int batches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const FusionConfig cfg = fixture::tiny_config(1 + trial % 3, trial % 2 == 0);
    FusionParams p = fixture::random_params(cfg, 1000 + static_cast<std::uint64_t>(trial));
    fixture::zero_value_and_output(p);
    const Batch batch = fixture::random_batch(cfg, 1 + trial % 5, 6, rng);
    worst = std::max(worst,
                     (fixture::outputs(p, cfg, batch).embedding - fixture::pooled_concat(batch)).cwiseAbs().maxCoeff());
    ++batches;
  }
  return {worst <= 1e-12, std::to_string(batches) + " batches, max |diff| " + sci(worst) + " (<= 1e-12)"};
}

Outcome permutation_padding() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> junk(-20, 20);
  double worst_perm = 0, worst_pad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const FusionConfig cfg = fixture::tiny_config(1 + trial % 2, trial % 3 != 0);
    const FusionParams p = fixture::random_params(cfg, 2000 + static_cast<std::uint64_t>(trial));
    const Batch batch = fixture::random_batch(cfg, 1 + trial % 4, 6, rng);
    const auto base = fixture::outputs(p, cfg, batch);

    Batch perm = batch;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      for (auto [x, m] : {std::pair{&perm.audio[i], &perm.audio_mask[i]}, std::pair{&perm.text[i], &perm.text_mask[i]}}) {
        std::vector<Index> order(static_cast<std::size_t>(x->rows()));
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), rng);
        Matrix y(x->rows(), x->cols());
        StepMask mm(m->size());
        for (std::size_t j = 0; j < order.size(); ++j) {
          y.row(static_cast<Index>(j)) = x->row(order[j]);
          mm[j] = (*m)[static_cast<std::size_t>(order[j])];
        }
        *x = y;
        *m = mm;
      }
    }
    worst_perm = std::max(worst_perm, fixture::max_abs_diff(base, fixture::outputs(p, cfg, perm)));

    Batch pad = batch;
    for (std::size_t i = 0; i < pad.size(); ++i) {
      for (auto [x, m] : {std::pair{&pad.audio[i], &pad.audio_mask[i]}, std::pair{&pad.text[i], &pad.text_mask[i]}}) {
        const Index extra = 1 + static_cast<Index>(rng() % 4);
        Matrix grown(x->rows() + extra, x->cols());
        grown.topRows(x->rows()) = *x;
        for (Index r = x->rows(); r < grown.rows(); ++r) {
          for (Index c = 0; c < grown.cols(); ++c) grown(r, c) = junk(rng);
        }
        *x = grown;
        m->resize(m->size() + static_cast<std::size_t>(extra), false);
      }
    }
    worst_pad = std::max(worst_pad, fixture::max_abs_diff(base, fixture::outputs(p, cfg, pad)));
  }
  return {worst_perm <= 1e-10 && worst_pad <= 1e-10,
          "100+100 trials, permutation " + sci(worst_perm) + ", padding " + sci(worst_pad) + " (<= 1e-10)"};
}

Outcome aux1_correctness() {
  std::set<int> codes;
  bool decode_ok = true;
  for (int a = 0; a < 4; ++a) {
    for (int t = 0; t < 4; ++t) {
      const int k = combined_label(a, t, 4);
      codes.insert(k);
      decode_ok = decode_ok && k / 4 == a && k % 4 == t && k == a * 4 + t;
    }
  }
  const bool bijective = decode_ok && codes.size() == 16 && *codes.begin() == 0 && *codes.rbegin() == 15;

  const FusionConfig cfg = fixture::tiny_config();
  std::mt19937_64 rng(9);
  bool multisets = true;
  auto bag = [](const std::vector<Matrix>& xs) {
    std::multiset<std::vector<double>> out;
    for (const auto& x : xs) {
      std::vector<double> v(x.data(), x.data() + x.size());
      v.push_back(static_cast<double>(x.rows()));
      out.insert(v);
    }
    return out;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const Batch b = fixture::random_batch(cfg, 1 + trial % 8, 5, rng);
    const Aux1Batch aux = build_aux1(b, 4, rng);
    multisets = multisets && bag(aux.batch.audio) == bag(b.audio) && bag(aux.batch.text) == bag(b.text);
    for (std::size_t i = 0; i < b.size(); ++i) {
      multisets = multisets && aux.batch.labels[i] == b.labels[i] * 4 + b.labels[aux.permutation[i]];
    }
  }

  const Batch b4 = fixture::random_batch(cfg, 4, 3, rng);
  std::map<std::vector<std::size_t>, int> counts;
  for (int i = 0; i < 10000; ++i) ++counts[build_aux1(b4, 4, rng).permutation];
  double worst = counts.size() == 24 ? 0.0 : 1.0;
  for (const auto& [perm, n] : counts) worst = std::max(worst, std::abs(n / 10000.0 - 1.0 / 24.0));

  return {bijective && multisets && worst <= 0.02,
          std::string("16/16 pairs ") + (bijective ? "bijective" : "NOT bijective") + ", multisets " +
              (multisets ? "bit-exact" : "DIFFER") + ", 24 perms max freq dev " + sci(worst) + " (<= 0.02)"};
}

Outcome aux2_correctness() {
  const Dataset data = fixture::random_dataset(4, 8, 3, 4, 10);
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.utterances[i].session != 1) train.push_back(i);
  }
  const ClassPools pools = ClassPools::from(data, train, 4);
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  long samples = 0, matched = 0, swapped = 0;
  for (int build = 0; build < 10000; ++build) {
    std::vector<std::size_t> idx;
    for (int i = 0; i < 4; ++i) idx.push_back(train[pick(rng)]);
    const Batch b = make_batch(data, idx);
    const Aux2Batch aux = build_aux2(b, data, pools, rng);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ++samples;
      matched += data.utterances[aux.donors[i]].emotion == b.labels[i] && aux.batch.labels[i] == b.labels[i];
      swapped += aux.donors[i] != idx[i];
    }
  }

  // Singleton pools: session 1 alone holds three per class, keep one per class.
  const std::vector<std::size_t> singles{0, 3, 6, 9};
  const ClassPools tiny = ClassPools::from(data, singles, 4);
  const Batch sb = make_batch(data, singles);
  const Aux2Batch same = build_aux2(sb, data, tiny, rng);
  const bool fallback = same.donors == singles && same.batch.audio == sb.audio && same.batch.text == sb.text;

  return {matched == samples && swapped == samples && fallback,
          std::to_string(matched) + "/" + std::to_string(samples) + " donors share the label over 10000 builds, " +
              "singleton fallback " + (fallback ? "unchanged" : "CHANGED")};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(11);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int e = 2 + static_cast<int>(rng() % 5);
    std::uniform_int_distribution<int> label(0, e - 1);
    std::vector<int> truth(1 + rng() % 80), pred(truth.size());
    for (auto& t : truth) t = label(rng);
    for (auto& p : pred) p = label(rng);
    ConfusionMatrix cm(e);
    cm.add(truth, pred);
    worst = std::max({worst, std::abs(weighted_accuracy(cm) - oracle::direct_wa(truth, pred)),
                      std::abs(unweighted_accuracy(cm) - oracle::direct_ua(truth, pred, e))});
  }
  double balanced_gap = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int e = 2 + trial % 4;
    const int per = 1 + trial % 9;
    std::uniform_int_distribution<int> label(0, e - 1);
    std::vector<int> truth, pred;
    for (int c = 0; c < e; ++c) {
      for (int k = 0; k < per; ++k) {
        truth.push_back(c);
        pred.push_back(label(rng));
      }
    }
    ConfusionMatrix cm(e);
    cm.add(truth, pred);
    balanced_gap = std::max(balanced_gap, std::abs(weighted_accuracy(cm) - unweighted_accuracy(cm)));
  }
  return {worst <= 1e-12 && balanced_gap < 1e-12,
          "1000 vectors max |diff| " + sci(worst) + " (<= 1e-12), balanced |WA-UA| " + sci(balanced_gap)};
}

Outcome optimizer() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3, 3), lr(1e-5, 0.3), b1(0.0, 0.99), b2(0.5, 0.9999), wd(0, 0.2);
  double worst = 0;
  const FusionConfig cfg = fixture::tiny_config();
  for (int c = 0; c < 20; ++c) {
    AdamWOptions o;
    o.learning_rate = lr(rng);
    o.beta1 = b1(rng);
    o.beta2 = b2(rng);
    o.weight_decay = wd(rng);
    // Scalar reference.
    double p = u(rng), m = 0, v = 0;
    // adamw_step on a model whose cls.b entry 0 holds the same scalar.
    FusionParams params = init_params(cfg, static_cast<std::uint64_t>(c));
    params.cls_b(0, 0) = p;
    OptimizerState state = make_optimizer_state(params, cfg);
    for (long t = 1; t <= 4; ++t) {
      const double g = u(rng);
      m = o.beta1 * m + (1 - o.beta1) * g;
      v = o.beta2 * v + (1 - o.beta2) * g * g;
      const double mh = m / (1 - std::pow(o.beta1, t));
      const double vh = v / (1 - std::pow(o.beta2, t));
      p = p - o.learning_rate * (mh / (std::sqrt(vh) + o.epsilon) + o.weight_decay * p);
      FusionParams grads = zeros_like(params, cfg);
      grads.cls_b(0, 0) = g;
      adamw_step(params, grads, state, cfg, o);
      worst = std::max(worst, std::abs(params.cls_b(0, 0) - p));
    }
  }
  const FusionParams start = fixture::random_params(cfg, 5);
  FusionParams fixed = start;
  OptimizerState state = make_optimizer_state(fixed, cfg);
  AdamWOptions o;
  o.weight_decay = 0;
  for (int i = 0; i < 10; ++i) adamw_step(fixed, zeros_like(fixed, cfg), state, cfg, o);
  bool fixpoint = true;
  std::vector<const Matrix*> before;
  for_each_parameter(start, cfg, [&](const std::string&, const Matrix& x) { before.push_back(&x); });
  std::size_t i = 0;
  for_each_parameter(fixed, cfg, [&](const std::string&, const Matrix& x) { fixpoint = fixpoint && x == *before[i++]; });
  return {worst <= 1e-12 && fixpoint,
          "20 cases x 4 steps max |diff| " + sci(worst) + " (<= 1e-12), zero-grad fixpoint " + (fixpoint ? "holds" : "BROKEN")};
}

Outcome overfit() {
  const auto start = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.per_class_per_session = 2;  // 40 utterances, first 32 used
  const Dataset data = synth_generate(sc, 13);
  std::vector<std::size_t> idx(32);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  FusionConfig cfg = fixture::tiny_config(1);
  TrainConfig t;
  t.adamw.learning_rate = 1e-3;
  t.epochs = 300;
  t.seed = 13;
  int first_perfect = 0;
  const TrainResult r = train(data, idx, cfg, t, [&](const EpochRecord& rec) {
    if (first_perfect == 0 && rec.train_accuracy == 1.0) first_perfect = rec.epoch;
  });
  const double acc = weighted_accuracy(evaluate(r.params, cfg, data, idx));
  const double secs = seconds_since(start);
  return {acc == 1.0 && secs < 120,
          "final train acc " + pct(acc) + ", first 100% epoch " + std::to_string(first_perfect) + " (<= 300), " +
              sci(secs) + " s (< 120)"};
}

// -- fusion-benefit experiments ---------------------------------------------

struct Split {
  std::vector<std::size_t> train, test;
};

Split by_index(const Dataset& d, int per_class, int train_per_class) {
  Split s;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::string& id = d.utterances[i].id;
    const int k = std::stoi(id.substr(id.rfind('_') + 1));
    (k % per_class < train_per_class ? s.train : s.test).push_back(i);
  }
  return s;
}

double train_and_score(const Dataset& d, const Split& s, const FusionConfig& cfg, TrainConfig t) {
  const TrainResult r = train(d, s.train, cfg, t);
  return weighted_accuracy(evaluate(r.params, cfg, d, s.test));
}

std::ofstream& table_log() {
  static std::ofstream log("acceptance_fusion_table.txt");
  return log;
}

Outcome fusion_trend(double& xor_secs_out) {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kSeeds = 5;
  SynthConfig sc;
  sc.mode = SynthMode::xor_bits;
  sc.num_emotions = 2;
  sc.noise = 0.3;
  sc.per_class_per_session = 30;  // 300 utterances: 200 train / 100 test

  struct Row {
    std::string name;
    FusionConfig cfg;
  };
  FusionConfig ca = fixture::tiny_config(1);
  ca.num_emotions = 2;
  FusionConfig fc = ca;
  fc.fusion = FusionKind::concat_fc;
  FusionConfig audio = fc, text = fc;
  audio.modality = ModalityUse::audio;
  text.modality = ModalityUse::text;
  const std::vector<Row> rows{{"audio only (FC)", audio}, {"text only (FC)", text}, {"audio+text FC", fc},
                              {"audio+text CA", ca}};

  std::vector<std::vector<std::future<double>>> runs(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      runs[r].push_back(std::async(std::launch::async, [&, r, seed] {
        const Dataset d = synth_generate(sc, 500 + static_cast<std::uint64_t>(seed));
        TrainConfig t;
        t.adamw.learning_rate = 1e-3;
        t.epochs = 100;
        t.seed = 900 + static_cast<std::uint64_t>(seed);
        return train_and_score(d, by_index(d, 30, 20), rows[r].cfg, t);
      }));
    }
  }
  std::vector<double> mean(rows.size(), 0.0);
  std::ostringstream table;
  table << "xor synthetic (E=2, 200 train / 100 test, 5 seeds), test WA per seed\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    table << "  " << std::left << std::setw(18) << rows[r].name << std::right;
    for (auto& f : runs[r]) {
      const double wa = f.get();
      mean[r] += wa / kSeeds;
      table << std::setw(8) << pct(wa);
    }
    table << "   mean " << pct(mean[r]) << "\n";
  }
  xor_secs_out = seconds_since(start);
  std::cout << table.str();
  table_log() << table.str();

  const bool unimodal = std::abs(mean[0] - 0.5) <= 0.05 && std::abs(mean[1] - 0.5) <= 0.05;
  const bool fused = mean[2] >= 0.9 && mean[3] >= 0.9;
  const bool ca_vs_fc = mean[3] >= mean[2] - 0.01;
  return {unimodal && fused && ca_vs_fc, "unimodal " + pct(mean[0]) + "/" + pct(mean[1]) + " (50%+-5%), FC " +
                                             pct(mean[2]) + ", CA " + pct(mean[3]) + " (>= 90%, CA >= FC-1%)"};
}

Outcome aux_trend(double xor_secs) {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kSeeds = 5;
  SynthConfig sc;
  sc.num_emotions = 4;
  sc.audio_signal = 0.5;
  sc.text_signal = 0.5;
  sc.noise = 0.8;
  sc.per_class_per_session = 15;
  const FusionConfig cfg = fixture::tiny_config(1);

  std::vector<std::future<double>> plain, aux;
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (bool with_aux : {false, true}) {
      (with_aux ? aux : plain).push_back(std::async(std::launch::async, [&, seed, with_aux] {
        const Dataset d = synth_generate(sc, 700 + static_cast<std::uint64_t>(seed));
        TrainConfig t;
        t.adamw.learning_rate = 1e-3;
        t.epochs = 60;
        t.seed = 800 + static_cast<std::uint64_t>(seed);
        t.enable_aux1 = t.enable_aux2 = with_aux;
        return train_and_score(d, by_index(d, 15, 10), cfg, t);
      }));
    }
  }
  double mean_plain = 0, mean_aux = 0;
  std::ostringstream table;
  table << "additive synthetic (E=4, s_a=s_t=0.5, sigma=0.8, 200 train / 100 test, 5 seeds), test WA per seed\n";
  table << "  CA                ";
  for (auto& f : plain) {
    const double wa = f.get();
    mean_plain += wa / kSeeds;
    table << std::setw(8) << pct(wa);
  }
  table << "   mean " << pct(mean_plain) << "\n  CA+Aux1&2         ";
  for (auto& f : aux) {
    const double wa = f.get();
    mean_aux += wa / kSeeds;
    table << std::setw(8) << pct(wa);
  }
  table << "   mean " << pct(mean_aux) << "\n";
  std::cout << table.str();
  table_log() << table.str();
  const double total = xor_secs + seconds_since(start);
  return {mean_aux >= mean_plain - 0.01 && total < 900,
          "CA " + pct(mean_plain) + ", CA+Aux1&2 " + pct(mean_aux) + " (>= CA-1%), both experiments " + sci(total) +
              " s (< 900)"};
}

// -- CLI determinism and CV protocol -------------------------------------------

int run(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cv_determinism() {
  const fs::path dir = fs::temp_directory_path() / "mermix_acceptance_cv";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = MERMIX_CLI_PATH;
  const std::string data = (dir / "d.mef").string();
  if (run(cli + " synth --per-class 4 --seed 3 --out " + data) != 0) return {false, "synth failed"};
  const std::string flags = " cv --preset synthetic --epochs 3 --aux1 --aux2 --dropout 0.1 --seed 17 --threads 5 --data " + data;
  if (run(cli + flags + " --out-dir " + (dir / "a").string()) != 0) return {false, "first cv run failed"};
  if (run(cli + flags + " --out-dir " + (dir / "b").string()) != 0) return {false, "second cv run failed"};
  bool same = true;
  for (const char* f : {"cv_report.txt", "cv_report.jsonl"}) {
    const std::string x = slurp(dir / "a" / f), y = slurp(dir / "b" / f);
    same = same && !x.empty() && x == y;
  }
  fs::remove_all(dir);
  return {same, same ? "cv_report.txt and cv_report.jsonl bit-identical across two runs" : "report files differ"};
}

Outcome cv_protocol() {
  SynthConfig sc;
  sc.per_class_per_session = 3;
  const Dataset data = synth_generate(sc, 19);
  TrainConfig t;
  t.adamw.learning_rate = 1e-3;
  t.epochs = 1;
  t.seed = 19;
  const CvReport report = run_cv(data, fixture::tiny_config(1), t);
  std::map<std::string, int> tested;
  std::size_t overlaps = 0;
  for (const auto& f : report.folds) {
    const std::set<std::string> train(f.train_ids.begin(), f.train_ids.end());
    for (const auto& id : f.test_ids) {
      ++tested[id];
      overlaps += train.count(id);
    }
  }
  bool once = tested.size() == data.size();
  for (const auto& u : data.utterances) once = once && tested[u.id] == 1;
  return {report.folds.size() == 5 && once && overlaps == 0,
          std::to_string(tested.size()) + "/" + std::to_string(data.size()) + " utterances tested exactly once, " +
              std::to_string(overlaps) + " train/test overlaps over 5 folds"};
}

}  // namespace

int main() {
  std::cout << "mermix acceptance suite" << std::endl;
  criterion("gradient correctness (C=8,H=2,K=2,E=4,B=3,T<=4)", gradient_correctness);
  criterion("residual identity", residual_identity);
  criterion("key-permutation and padding invariance", permutation_padding);
  criterion("aux1 correctness", aux1_correctness);
  criterion("aux2 correctness", aux2_correctness);
  criterion("metric oracles", metric_oracles);
  criterion("optimizer", optimizer);
  criterion("overfit smoke test (32 samples, K=1, lr=1e-3)", overfit);
  double xor_secs = 0;
  criterion("fusion-benefit trend on xor data", [&] { return fusion_trend(xor_secs); });
  criterion("aux-task trend on additive data", [&] { return aux_trend(xor_secs); });
  criterion("cv determinism (CLI, two runs)", cv_determinism);
  criterion("cv protocol", cv_protocol);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
