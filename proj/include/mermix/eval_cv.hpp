#ifndef MERMIX_EVAL_CV_HPP
#define MERMIX_EVAL_CV_HPP

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mermix/data_io.hpp"
#include "mermix/fusion_model.hpp"
#include "mermix/trainer.hpp"

namespace mermix {

/// E x E counts; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 2);

  void add(int truth, int predicted);
  void add(std::span<const int> truth, std::span<const int> predicted);

  int num_classes() const { return static_cast<int>(counts_.rows()); }
  long count(int truth, int predicted) const { return counts_(truth, predicted); }
  long total() const { return counts_.sum(); }
  const Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>& counts() const { return counts_; }

  bool operator==(const ConfusionMatrix& other) const { return counts_ == other.counts_; }

 private:
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts_;
};

/// trace / total: overall accuracy.
double weighted_accuracy(const ConfusionMatrix& cm);
/// Mean per-class recall over classes with at least one true sample.
double unweighted_accuracy(const ConfusionMatrix& cm);

/// Predicts `indices` in mini-batches and tallies the main-head confusion.
ConfusionMatrix evaluate(const FusionParams& params, const FusionConfig& cfg, const Dataset& data,
                         std::span<const std::size_t> indices, std::size_t batch_size = 64);

struct FoldReport {
  int fold = 0;  // == held-out session
  ConfusionMatrix confusion;
  double wa = 0;
  double ua = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct CvReport {
  std::vector<FoldReport> folds;
  double mean_wa = 0;
  double mean_ua = 0;
};

struct CvOptions {
  unsigned threads = 0;  // 0: MERMIX_THREADS, else hardware concurrency
};

/// Threads for fold parallelism: MERMIX_THREADS if set and positive, else the
/// hardware concurrency (at least 1).
unsigned default_cv_threads();

/// Leave-one-session-out: per fold, fresh init from a fold seed, train on four
/// sessions, evaluate on the fifth.
CvReport run_cv(const Dataset& data, const FusionConfig& cfg, const TrainConfig& tcfg, const CvOptions& opts = {});

void write_report_table(std::ostream& os, const CvReport& report);
/// One JSON object per fold, then a summary line.
void write_report_records(std::ostream& os, const CvReport& report);

}  // namespace mermix

#endif  // MERMIX_EVAL_CV_HPP
