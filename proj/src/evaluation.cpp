#include "cfan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "cfan/kernels.hpp"

namespace cfan {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> distinct_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Number of entries >= c in an ascending sorted vector.
std::size_t count_at_least(const std::vector<double>& sorted, double c) {
  return static_cast<std::size_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), c));
}

double fraction(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

void Gallery::validate() const {
  if (subject_ids.size() != reps.rows()) throw std::invalid_argument("gallery ids/reps count mismatch");
  std::unordered_set<std::string> seen;
  for (const auto& id : subject_ids) {
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate gallery subject '" + id + "'");
  }
}

Truth match_probes(const ProbeSet& probes, const Gallery& gallery) {
  gallery.validate();
  std::unordered_map<std::string, std::ptrdiff_t> index;
  for (std::size_t g = 0; g < gallery.subject_ids.size(); ++g)
    index.emplace(gallery.subject_ids[g], static_cast<std::ptrdiff_t>(g));
  Truth t;
  t.reserve(probes.subject_ids.size());
  for (const auto& id : probes.subject_ids) {
    const auto it = index.find(id);
    t.push_back(it == index.end() ? kUnmated : it->second);
  }
  return t;
}

Matrix score_matrix(const Matrix& probes, const Matrix& gallery) {
  return kernels::score_matrix_parallel(probes, gallery);
}

std::size_t rank_of_truth(std::span<const double> scores, std::size_t truth) {
  if (truth >= scores.size()) throw std::invalid_argument("truth index outside gallery");
  const double st = scores[truth];
  std::size_t rank = 1;
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (scores[g] > st || (scores[g] == st && g < truth)) ++rank;
  }
  return rank;
}

std::size_t top_index(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("empty gallery");
  std::size_t best = 0;
  for (std::size_t g = 1; g < scores.size(); ++g)
    if (scores[g] > scores[best]) best = g;
  return best;
}

namespace {

void check_truth(const Matrix& scores, const Truth& truth, const EmptyFlags& empty) {
  if (truth.size() != scores.rows()) throw std::invalid_argument("one truth entry per probe required");
  if (!empty.empty() && empty.size() != scores.rows()) throw std::invalid_argument("one empty flag per probe required");
  for (auto t : truth) {
    if (t != kUnmated && (t < 0 || static_cast<std::size_t>(t) >= scores.cols())) {
      throw std::invalid_argument("truth index outside gallery");
    }
  }
}

bool is_empty(const EmptyFlags& empty, std::size_t p) { return !empty.empty() && empty[p]; }

// Ranks of the true entries; empty probes get G + 1 (never retrieved).
std::vector<std::size_t> mated_ranks(const Matrix& scores, const Truth& truth, const EmptyFlags& empty) {
  check_truth(scores, truth, empty);
  std::vector<std::size_t> ranks(scores.rows());
  for (std::size_t p = 0; p < scores.rows(); ++p) {
    if (truth[p] == kUnmated) throw std::invalid_argument("closed-set identification requires mated probes only");
    ranks[p] = is_empty(empty, p) ? scores.cols() + 1 : rank_of_truth(scores.row(p), static_cast<std::size_t>(truth[p]));
  }
  return ranks;
}

}  // namespace

std::vector<CmcPoint> closed_set_ir(const Matrix& scores, const Truth& truth, const std::vector<std::size_t>& ranks,
                                    const EmptyFlags& empty) {
  const auto r = mated_ranks(scores, truth, empty);
  std::vector<CmcPoint> out;
  for (auto k : ranks) {
    if (k == 0) throw std::invalid_argument("ranks are 1-based");
    const auto hits = static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [k](std::size_t x) { return x <= k; }));
    out.push_back({k, fraction(hits, r.size())});
  }
  return out;
}

std::vector<double> cmc_curve(const Matrix& scores, const Truth& truth, const EmptyFlags& empty) {
  const auto r = mated_ranks(scores, truth, empty);
  std::vector<std::size_t> hist(scores.cols() + 2, 0);
  for (auto x : r) ++hist[x];
  std::vector<double> curve(scores.cols());
  std::size_t cum = 0;
  for (std::size_t k = 1; k <= scores.cols(); ++k) {
    cum += hist[k];
    curve[k - 1] = fraction(cum, r.size());
  }
  return curve;
}

std::vector<TpirPoint> open_set_tpir(const Matrix& scores, const Truth& truth, const std::vector<double>& fpir_targets,
                                     const EmptyFlags& empty) {
  check_truth(scores, truth, empty);
  std::vector<double> unmated_top;
  std::vector<double> mated_hit_top;  // top scores of mated probes identified correctly
  std::vector<double> all_top;
  std::size_t n_mated = 0;
  for (std::size_t p = 0; p < scores.rows(); ++p) {
    const auto row = scores.row(p);
    const std::size_t top = top_index(row);
    all_top.push_back(row[top]);
    if (truth[p] == kUnmated) {
      unmated_top.push_back(row[top]);
    } else {
      ++n_mated;
      if (top == static_cast<std::size_t>(truth[p]) && !is_empty(empty, p)) mated_hit_top.push_back(row[top]);
    }
  }
  if (unmated_top.empty()) throw std::invalid_argument("open-set identification needs an unmated probe");
  std::sort(unmated_top.begin(), unmated_top.end());
  std::sort(mated_hit_top.begin(), mated_hit_top.end());
  const auto candidates = distinct_sorted(all_top);

  std::vector<TpirPoint> out;
  for (double target : fpir_targets) {
    TpirPoint pt;
    pt.target_fpir = target;
    pt.threshold = kInf;
    pt.unreachable = true;
    // FPIR is nonincreasing in the threshold: the first candidate that meets
    // the target is the smallest one.
    const auto it = std::partition_point(candidates.begin(), candidates.end(), [&](double c) {
      return fraction(count_at_least(unmated_top, c), unmated_top.size()) > target;
    });
    if (it != candidates.end()) {
      pt.threshold = *it;
      pt.unreachable = false;
    }
    pt.achieved_fpir = fraction(count_at_least(unmated_top, pt.threshold), unmated_top.size());
    pt.tpir = fraction(count_at_least(mated_hit_top, pt.threshold), n_mated);
    out.push_back(pt);
  }
  return out;
}

std::vector<TarPoint> verification_tar(const std::vector<double>& genuine, const std::vector<double>& impostor,
                                       const std::vector<double>& far_targets) {
  if (genuine.empty() || impostor.empty()) throw std::invalid_argument("verification needs genuine and impostor scores");
  auto gen = genuine;
  auto imp = impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> all = gen;
  all.insert(all.end(), imp.begin(), imp.end());
  const auto candidates = distinct_sorted(std::move(all));

  std::vector<TarPoint> out;
  for (double target : far_targets) {
    const auto it = std::partition_point(candidates.begin(), candidates.end(), [&](double c) {
      return fraction(count_at_least(imp, c), imp.size()) > target;
    });
    TarPoint pt;
    pt.target_far = target;
    pt.threshold = it == candidates.end() ? kInf : *it;
    pt.achieved_far = fraction(count_at_least(imp, pt.threshold), imp.size());
    pt.tar = fraction(count_at_least(gen, pt.threshold), gen.size());
    out.push_back(pt);
  }
  return out;
}

std::vector<RocPoint> roc_curve(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  if (genuine.empty() || impostor.empty()) throw std::invalid_argument("verification needs genuine and impostor scores");
  auto gen = genuine;
  auto imp = impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  std::vector<double> all = gen;
  all.insert(all.end(), imp.begin(), imp.end());
  auto candidates = distinct_sorted(std::move(all));
  candidates.push_back(kInf);
  std::vector<RocPoint> roc;
  roc.reserve(candidates.size());
  for (double c : candidates) {
    roc.push_back({c, fraction(count_at_least(imp, c), imp.size()), fraction(count_at_least(gen, c), gen.size())});
  }
  return roc;
}

namespace {

// Threshold maximizing accuracy over the pairs with include[k] set. Among
// equally good splits the lowest wins; the threshold sits at the midpoint of
// the gap between the rejected and accepted scores (-inf / +inf at the ends).
double best_threshold(const std::vector<double>& scores, const std::vector<bool>& same, const std::vector<bool>& include) {
  struct Item {
    double score;
    bool same;
  };
  std::vector<Item> items;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (include[k]) items.push_back({scores[k], same[k]});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Split before items[i]: everything from i upward is accepted.
  // correct = same pairs accepted + diff pairs rejected.
  std::size_t same_above = static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [](const Item& it) { return it.same; }));
  std::size_t diff_below = 0;
  std::size_t best_correct = same_above;
  double best = -kInf;
  std::size_t i = 0;
  while (i < items.size()) {
    const double v = items[i].score;
    while (i < items.size() && items[i].score == v) {
      if (items[i].same) --same_above; else ++diff_below;
      ++i;
    }
    if (same_above + diff_below > best_correct) {
      best_correct = same_above + diff_below;
      best = i < items.size() ? std::midpoint(v, items[i].score) : kInf;
    }
  }
  return best;
}

}  // namespace

PairProtocolResult pair_protocol(const std::vector<double>& scores, const std::vector<bool>& same, std::size_t folds) {
  if (scores.size() != same.size()) throw std::invalid_argument("one label per pair score required");
  if (folds < 2) throw std::invalid_argument("pair protocol needs at least 2 folds");
  const std::size_t n = scores.size();
  if (n < folds) throw std::invalid_argument("fewer pairs than folds");

  PairProtocolResult res;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n / folds;
    const std::size_t hi = (f + 1) * n / folds;
    std::vector<bool> train(n, true);
    for (std::size_t k = lo; k < hi; ++k) train[k] = false;
    const double tau = best_threshold(scores, same, train);
    std::size_t correct = 0;
    for (std::size_t k = lo; k < hi; ++k) correct += (scores[k] >= tau) == same[k] ? 1 : 0;
    res.fold_thresholds.push_back(tau);
    res.fold_accuracies.push_back(fraction(correct, hi - lo));
  }
  double mean = 0.0;
  for (double a : res.fold_accuracies) mean += a;
  mean /= static_cast<double>(folds);
  double var = 0.0;
  for (double a : res.fold_accuracies) var += (a - mean) * (a - mean);
  res.mean_accuracy = mean;
  res.std_accuracy = std::sqrt(var / static_cast<double>(folds));
  return res;
}

PairProtocolResult pairwise_protocol(const std::vector<Template>& templates, const std::vector<TemplatePair>& pairs,
                                     const QualityHead* head, PoolingMode mode, std::size_t embedding_dim,
                                     std::size_t folds) {
  const auto reps = kernels::aggregate_templates_parallel(templates, head, mode, embedding_dim);
  std::vector<double> scores;
  std::vector<bool> same;
  for (const auto& p : pairs) {
    if (p.first >= reps.size() || p.second >= reps.size()) throw std::invalid_argument("pair references unknown template");
    scores.push_back(cosine_similarity(reps[p.first].vector, reps[p.second].vector));
    same.push_back(p.same);
  }
  return pair_protocol(scores, same, folds);
}

namespace {

void append_line(std::string& out, const char* metric, double target, double value, double threshold) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "metric=%s target=%.17g value=%.17g threshold=%.17g\n", metric, target, value, threshold);
  out += buf;
}

}  // namespace

std::string format_report(const EvalReport& r) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::string out;
  for (const auto& c : r.cmc) append_line(out, "ir", static_cast<double>(c.rank), c.ir, nan);
  for (const auto& t : r.tpir) {
    append_line(out, "tpir", t.target_fpir, t.tpir, t.threshold);
    append_line(out, "fpir_achieved", t.target_fpir, t.achieved_fpir, t.threshold);
    if (t.unreachable) append_line(out, "fpir_unreachable", t.target_fpir, 1.0, t.threshold);
  }
  for (const auto& t : r.tar) {
    append_line(out, "tar", t.target_far, t.tar, t.threshold);
    append_line(out, "far_achieved", t.target_far, t.achieved_far, t.threshold);
  }
  if (r.pairs) {
    const double k = static_cast<double>(r.pairs->fold_accuracies.size());
    append_line(out, "pair_accuracy_mean", k, r.pairs->mean_accuracy, nan);
    append_line(out, "pair_accuracy_std", k, r.pairs->std_accuracy, nan);
  }
  return out;
}

}  // namespace cfan
