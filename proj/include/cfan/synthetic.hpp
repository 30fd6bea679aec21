#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfan/aggregation.hpp"
#include "cfan/core_math.hpp"

namespace cfan {

/// Parameters of the additive noise model f_i = mu + eps_i with per-instance,
/// per-component noise scales drawn independently from U[sigma_min, sigma_max].
struct NoiseModelConfig {
  std::size_t n_subjects = 100;
  std::size_t dim = 64;       // D
  std::size_t map_dim = 128;  // M
  std::size_t instances_per_subject = 12;
  double sigma_min = 0.1;
  double sigma_max = 2.0;
  std::size_t quality_latent_dim = 64;
  std::uint64_t seed = 0;
  // Seeds the embedding mixing matrix separately so datasets drawn with
  // different seeds share one feature-map encoding.
  std::uint64_t mix_seed = 7;

  void validate() const;
};

/// Where the noise-scale latents live inside feature_map: coordinates
/// [offset, offset + dim) hold log(sigma_j) for components j < dim.
struct LatentLayout {
  std::size_t offset = 0;
  std::size_t dim = 0;
};

LatentLayout latent_layout(std::size_t map_dim, std::size_t quality_latent_dim);

/// Lower clamp applied to noise scales before taking their log.
inline constexpr double kNoiseScaleFloor = 1e-3;

double encode_noise_scale(double sigma);
double decode_noise_scale(double latent);

struct SyntheticSubject {
  std::string id;
  Vector mean;                              // mu
  std::vector<FeatureInstance> instances;
  Matrix noise_scales;                      // N x D, sigma_ij
  Matrix noise;                             // N x D, realized eps_ij
};

struct SyntheticDataset {
  NoiseModelConfig config;
  Matrix embedding_mix;  // (M - L) x D
  std::vector<SyntheticSubject> subjects;
};

SyntheticDataset generate(const NoiseModelConfig& cfg);

/// Builds feature_map = [embedding_mix * embedding ; encoded noise scales].
Vector make_feature_map(const Matrix& embedding_mix, std::span<const double> embedding,
                        std::span<const double> noise_scales, const LatentLayout& layout);

/// Inverse-variance weights per component; columns sum to one. Zero scales
/// are exact observations and share the column's weight uniformly.
Matrix oracle_weights(const Matrix& noise_scales);

/// Minimum-variance unbiased linear fusion given the true noise scales.
Vector oracle_pool(const Matrix& embeddings, const Matrix& noise_scales);

/// Absolute Pearson correlation between components of within-subject
/// residuals (each group centered on its own mean, then pooled). Components
/// with zero residual variance get 0 off the diagonal; the diagonal is 1.
Matrix intra_class_correlation(const std::vector<Matrix>& per_subject);
Matrix intra_class_correlation(const SyntheticDataset& ds);

}  // namespace cfan
