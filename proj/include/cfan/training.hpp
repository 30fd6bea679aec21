#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfan/aggregation.hpp"
#include "cfan/core_math.hpp"
#include "cfan/synthetic.hpp"

namespace cfan {

enum class MiningStrategy { batch_hard, all };

struct TrainConfig {
  double alpha = 1.0;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.01;
  std::size_t steps = 4000;
  std::size_t subjects_per_batch = 20;
  std::size_t templates_per_subject = 4;
  std::size_t images_per_template = 3;
  std::uint64_t seed = 0;
  double noise_augment_sigma = 0.0;  // 0 disables augmentation
  std::size_t quality_latent_dim = 0;  // latent coords augmented alongside embeddings
  bool normalize_reps = true;  // triplet loss on L2-normalized template reps
  MiningStrategy mining = MiningStrategy::batch_hard;
  QualityMode head_mode = QualityMode::component_wise;
  double bn_eps = 1e-5;

  void validate() const;
};

/// All instances of one subject, available to the online template sampler.
struct SubjectPool {
  std::string id;
  std::vector<FeatureInstance> instances;
};

using TrainingPool = std::vector<SubjectPool>;

TrainingPool make_training_pool(const SyntheticDataset& ds);

struct Batch {
  std::vector<Template> templates;
  std::vector<std::size_t> labels;  // dense label per template, 0..subjects_per_batch-1
};

/// Samples subjects without replacement, then partitions a random draw of
/// each subject's instances into fixed-size templates.
Batch sample_batch(const TrainingPool& pool, const TrainConfig& cfg, std::mt19937_64& rng);

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// For every anchor with at least one positive and one negative, the farthest
/// same-label and the nearest other-label template (ties to the lowest index).
std::vector<Triplet> mine_hard_triplets(const Matrix& reps, std::span<const std::size_t> labels);

/// Every valid (anchor, positive, negative) combination, for ablation.
std::vector<Triplet> mine_all_triplets(std::span<const std::size_t> labels);

struct TripletLoss {
  double loss = 0.0;
  Matrix dreps;
  std::size_t active = 0;
};

/// Sum over triplets of [alpha + d(a,p) - d(a,n)]_+ with squared euclidean d.
/// A hinge argument of exactly zero takes the zero-gradient branch.
TripletLoss triplet_loss(const Matrix& reps, const std::vector<Triplet>& triplets, double alpha);

struct OptimizerState {
  Vector v_gamma;
  Vector v_beta;
  Matrix v_weight;
  Vector v_bias;

  static OptimizerState zeros_like(const QualityHead& head);
};

struct BatchEvaluation {
  double loss = 0.0;
  std::size_t n_triplets = 0;
  std::size_t active_triplets = 0;
  QualityHeadGrads grads;
  QualityForward forward;
};

/// Forward through head, pooling, mining and loss, and backward to head params.
BatchEvaluation evaluate_batch(const Batch& batch, const QualityHead& head, const TrainConfig& cfg);

/// v <- momentum v - lr (g + weight_decay theta); theta <- theta + v.
void sgd_update(QualityHead& head, const QualityHeadGrads& grads, OptimizerState& opt, const TrainConfig& cfg);

struct StepResult {
  double loss = 0.0;
  std::size_t active_triplets = 0;
};

/// One optimization step. Throws std::runtime_error on a non-finite loss.
StepResult train_step(const Batch& batch, QualityHead& head, OptimizerState& opt, const TrainConfig& cfg);

struct TrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t active_triplets = 0;
};

std::string format_log_line(const TrainLogEntry& e);

struct TrainResult {
  QualityHead head;
  std::vector<TrainLogEntry> log;
};

TrainResult train(const TrainingPool& pool, std::size_t map_dim, std::size_t embedding_dim,
                  const TrainConfig& cfg);

/// Adds N(0, sigma^2) noise to the embedding and records the realized
/// per-component noise magnitude in the latent coordinates of feature_map.
FeatureInstance augment_noise(const FeatureInstance& instance, double sigma, std::mt19937_64& rng,
                              const LatentLayout& layout);

}  // namespace cfan
