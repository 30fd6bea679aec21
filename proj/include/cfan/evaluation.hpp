#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cfan/aggregation.hpp"
#include "cfan/core_math.hpp"

namespace cfan {

/// Gallery index of each probe's true subject, or kUnmated.
using Truth = std::vector<std::ptrdiff_t>;
inline constexpr std::ptrdiff_t kUnmated = -1;

struct Gallery {
  std::vector<std::string> subject_ids;
  Matrix reps;  // G x D

  void validate() const;  // ids unique, one row per id
};

struct ProbeSet {
  std::vector<std::string> subject_ids;
  Matrix reps;  // P x D
  std::vector<bool> empty;  // templates with no instances; may be left unset
};

/// Resolves each probe subject to its gallery index (kUnmated if absent).
Truth match_probes(const ProbeSet& probes, const Gallery& gallery);

/// Pairwise cosine similarities; zero-vector rows score -1 everywhere.
Matrix score_matrix(const Matrix& probes, const Matrix& gallery);

/// 1-based rank of the true entry: strictly higher scores come first and
/// equal scores are ordered by gallery index.
std::size_t rank_of_truth(std::span<const double> scores, std::size_t truth);

/// Gallery index of the top score, lowest index on ties.
std::size_t top_index(std::span<const double> scores);

struct CmcPoint {
  std::size_t rank = 0;
  double ir = 0.0;
};

/// Probes flagged in `empty` (empty templates) are misses at every rank,
/// whatever the tie-break would give their all -1 score row. An empty flag
/// vector means no probe is empty.
using EmptyFlags = std::vector<bool>;

/// Closed-set identification rate at each rank. Every probe must be mated.
std::vector<CmcPoint> closed_set_ir(const Matrix& scores, const Truth& truth,
                                    const std::vector<std::size_t>& ranks = {1, 5, 10},
                                    const EmptyFlags& empty = {});

/// IR for every rank 1..G.
std::vector<double> cmc_curve(const Matrix& scores, const Truth& truth, const EmptyFlags& empty = {});

struct TpirPoint {
  double target_fpir = 0.0;
  double tpir = 0.0;
  double threshold = 0.0;
  double achieved_fpir = 0.0;
  // No observed top score meets the target; threshold moved to +inf.
  bool unreachable = false;
};

/// Open-set identification. The threshold is the smallest observed top score
/// whose FPIR over unmated probes is <= target ("score >= threshold" accepts).
/// A mated probe counts if its top entry is the true subject and clears it.
/// Empty mated probes are never counted as identified.
std::vector<TpirPoint> open_set_tpir(const Matrix& scores, const Truth& truth,
                                     const std::vector<double>& fpir_targets = {0.01, 0.10},
                                     const EmptyFlags& empty = {});

struct TarPoint {
  double target_far = 0.0;
  double tar = 0.0;
  double threshold = 0.0;
  double achieved_far = 0.0;
};

/// Threshold is the smallest observed score with FAR <= target (+inf if none).
std::vector<TarPoint> verification_tar(const std::vector<double>& genuine, const std::vector<double>& impostor,
                                       const std::vector<double>& far_targets = {0.001, 0.01});

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double tar = 0.0;
};

std::vector<RocPoint> roc_curve(const std::vector<double>& genuine, const std::vector<double>& impostor);

struct PairProtocolResult {
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population std over folds
  std::vector<double> fold_accuracies;
  std::vector<double> fold_thresholds;
};

/// k-fold accuracy: folds are contiguous blocks, each fold's threshold
/// maximizes accuracy on the remaining folds. The lowest maximizing split
/// wins and the threshold is the midpoint of its score gap.
PairProtocolResult pair_protocol(const std::vector<double>& scores, const std::vector<bool>& same,
                                 std::size_t folds = 10);

struct TemplatePair {
  std::size_t first = 0;
  std::size_t second = 0;
  bool same = false;
};

/// Aggregates the templates with `mode`, scores each pair by cosine and runs
/// the k-fold protocol.
PairProtocolResult pairwise_protocol(const std::vector<Template>& templates, const std::vector<TemplatePair>& pairs,
                                     const QualityHead* head, PoolingMode mode, std::size_t embedding_dim,
                                     std::size_t folds = 10);

struct EvalReport {
  std::vector<CmcPoint> cmc;
  std::vector<TpirPoint> tpir;
  std::vector<TarPoint> tar;
  std::optional<PairProtocolResult> pairs;
};

/// One line per metric: `metric=<name> target=<v> value=<v> threshold=<v>`.
std::string format_report(const EvalReport& report);

}  // namespace cfan
