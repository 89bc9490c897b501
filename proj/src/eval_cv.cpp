#include "mermix/eval_cv.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace mermix {

ConfusionMatrix::ConfusionMatrix(int num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs >= 1 class");
  counts_ = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_classes, num_classes);
}

void ConfusionMatrix::add(int truth, int predicted) {
  const int n = num_classes();
  if (truth < 0 || truth >= n || predicted < 0 || predicted >= n) {
    throw LabelError("confusion: label pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                     ") outside [0, " + std::to_string(n) + ")");
  }
  ++counts_(truth, predicted);
}

void ConfusionMatrix::add(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("confusion: truth/prediction length mismatch");
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
}

double weighted_accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total == 0) throw ConfigError("weighted accuracy of an empty confusion matrix");
  return static_cast<double>(cm.counts().trace()) / static_cast<double>(total);
}

double unweighted_accuracy(const ConfusionMatrix& cm) {
  double sum = 0;
  int classes = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    const long row = cm.counts().row(c).sum();
    if (row == 0) continue;
    sum += static_cast<double>(cm.count(c, c)) / static_cast<double>(row);
    ++classes;
  }
  if (classes == 0) throw ConfigError("unweighted accuracy with no true samples in any class");
  return sum / classes;
}

ConfusionMatrix evaluate(const FusionParams& params, const FusionConfig& cfg, const Dataset& data,
                         std::span<const std::size_t> indices, std::size_t batch_size) {
  ConfusionMatrix cm(cfg.num_emotions);
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const Batch batch = make_batch(data, chunk);
    cm.add(batch.labels, predict(params, cfg, batch));
  }
  return cm;
}

unsigned default_cv_threads() {
  if (const char* env = std::getenv("MERMIX_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

CvReport run_cv(const Dataset& data, const FusionConfig& cfg, const TrainConfig& tcfg, const CvOptions& opts) {
  cfg.validate();
  tcfg.validate();
  const auto folds = split_by_session(data);
  CvReport report;
  report.folds.resize(folds.size());

  auto run_fold = [&](std::size_t k) {
    const Fold& f = folds[k];
    TrainConfig fold_cfg = tcfg;
    fold_cfg.seed = derive_seed(tcfg.seed, 100 + static_cast<std::uint64_t>(f.session));
    const TrainResult trained = train(data, f.train, cfg, fold_cfg);
    FoldReport& r = report.folds[k];
    r.fold = f.session;
    r.confusion = evaluate(trained.params, cfg, data, f.test);
    r.wa = weighted_accuracy(r.confusion);
    r.ua = unweighted_accuracy(r.confusion);
    for (std::size_t i : f.train) r.train_ids.push_back(data.utterances[i].id);
    for (std::size_t i : f.test) r.test_ids.push_back(data.utterances[i].id);
  };

  const unsigned threads = std::min<unsigned>(opts.threads > 0 ? opts.threads : default_cv_threads(),
                                              static_cast<unsigned>(folds.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t k = next++; k < folds.size(); k = next++) {
      try {
        run_fold(k);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (const auto& f : report.folds) {
    report.mean_wa += f.wa;
    report.mean_ua += f.ua;
  }
  report.mean_wa /= static_cast<double>(report.folds.size());
  report.mean_ua /= static_cast<double>(report.folds.size());
  return report;
}

void write_report_table(std::ostream& os, const CvReport& report) {
  const auto flags = os.flags();
  os << "fold  session  test_n   WA(%)   UA(%)\n";
  for (const auto& f : report.folds) {
    os << std::setw(4) << f.fold << std::setw(9) << f.fold << std::setw(8) << f.confusion.total() << std::fixed
       << std::setprecision(2) << std::setw(8) << 100 * f.wa << std::setw(8) << 100 * f.ua << "\n";
  }
  os << "mean" << std::string(17, ' ') << std::fixed << std::setprecision(2) << std::setw(8) << 100 * report.mean_wa
     << std::setw(8) << 100 * report.mean_ua << "\n";
  os.flags(flags);
}

void write_report_records(std::ostream& os, const CvReport& report) {
  for (const auto& f : report.folds) {
    nlohmann::ordered_json j;
    j["fold"] = f.fold;
    j["wa"] = f.wa;
    j["ua"] = f.ua;
    std::vector<std::vector<long>> cm;
    for (int r = 0; r < f.confusion.num_classes(); ++r) {
      std::vector<long> row;
      for (int c = 0; c < f.confusion.num_classes(); ++c) row.push_back(f.confusion.count(r, c));
      cm.push_back(std::move(row));
    }
    j["confusion"] = cm;
    os << j.dump() << "\n";
  }
  nlohmann::ordered_json summary;
  summary["mean_wa"] = report.mean_wa;
  summary["mean_ua"] = report.mean_ua;
  summary["folds"] = report.folds.size();
  os << summary.dump() << "\n";
}

}  // namespace mermix
