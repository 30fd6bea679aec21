#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cfan/core_math.hpp"

namespace cfan {

/// One observation: the quality-head input (`feature_map`, dim M) and the
/// frozen embedding that gets fused (`embedding`, dim D).
struct FeatureInstance {
  Vector feature_map;
  Vector embedding;

  friend bool operator==(const FeatureInstance&, const FeatureInstance&) = default;
};

struct Template {
  std::string subject_id;
  std::string template_id;
  std::vector<FeatureInstance> instances;
};

enum class PoolingMode { average, instance, cfan };

std::string_view to_string(PoolingMode mode);
PoolingMode parse_pooling_mode(std::string_view name);

enum class QualityMode { component_wise, instance_scalar };

enum class BnStats { train, frozen };

/// Batch-norm followed by one fully connected layer. In instance-scalar mode
/// the fc layer has a single output that is broadcast over all D components.
struct QualityHead {
  QualityMode mode = QualityMode::component_wise;
  std::size_t embedding_dim = 0;
  BatchNormParams bn;
  Vector running_mean;
  Vector running_var;
  double bn_momentum = 0.9;
  LinearParams fc;

  std::size_t map_dim() const { return bn.dim(); }
  std::size_t out_dim() const { return fc.out_dim(); }

  /// gamma = 1, beta = 0, running stats (0, 1), fc weight ~ U[-1/sqrt(M), 1/sqrt(M)], bias 0.
  static QualityHead initialize(std::size_t map_dim, std::size_t embedding_dim, QualityMode mode,
                                std::mt19937_64& rng);

  void validate() const;
};

struct QualityForward {
  Matrix q;         // N x D, after broadcast in instance-scalar mode
  Matrix bn_out;    // linear layer input
  BatchNormCache bn_cache;
  Vector batch_mean;
  Vector batch_var;
  BnStats stats = BnStats::frozen;
};

struct QualityHeadGrads {
  Vector dgamma;
  Vector dbeta;
  Matrix dweight;
  Vector dbias;
};

/// Q(maps). Train stats normalize with the batch; frozen stats use the
/// head's running mean/var.
QualityForward quality_forward(const Matrix& maps, const QualityHead& head, BnStats stats);

/// Parameter gradients for an upstream dQ (N x D). Requires a train-stats forward.
QualityHeadGrads quality_backward(const Matrix& dq, const QualityForward& fwd, const QualityHead& head);

/// Blends batch statistics into the running estimates with the head's momentum.
void update_running_stats(QualityHead& head, const QualityForward& fwd);

struct AggregatedRep {
  Vector vector;
  PoolingMode mode = PoolingMode::average;
  std::size_t n_instances = 0;
};

struct CfanPoolCache {
  Matrix embeddings;
  Matrix weights;
};

AggregatedRep pool_average(const Matrix& embeddings);

/// Softmax over the per-instance scalars, then weighted row sum.
AggregatedRep pool_instance(const Matrix& embeddings, std::span<const double> scalars);

/// r_j = sum_i w_ij f_ij with w = column softmax of the qualities.
AggregatedRep pool_cfan(const Matrix& embeddings, const Matrix& qualities,
                        CfanPoolCache* cache = nullptr);

struct CfanPoolGrads {
  Matrix dembeddings;
  Matrix dqualities;
};

CfanPoolGrads pool_cfan_backward(std::span<const double> drep, const CfanPoolCache& cache);

Matrix stack_feature_maps(const std::vector<FeatureInstance>& instances);
Matrix stack_embeddings(const std::vector<FeatureInstance>& instances);

/// Fuses one template. Empty templates yield the zero vector of `embedding_dim`.
/// `head` is required for instance and cfan modes and must match the mode.
AggregatedRep aggregate_template(const Template& t, const QualityHead* head, PoolingMode mode,
                                 std::size_t embedding_dim);

}  // namespace cfan
