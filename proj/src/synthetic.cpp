#include "cfan/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace cfan {

void NoiseModelConfig::validate() const {
  if (dim == 0) throw std::invalid_argument("noise model: dim must be positive");
  if (map_dim == 0) throw std::invalid_argument("noise model: map_dim must be positive");
  if (!(sigma_min >= 0.0)) throw std::invalid_argument("noise model: sigma_min must be >= 0");
  if (!(sigma_max >= sigma_min)) throw std::invalid_argument("noise model: sigma_max must be >= sigma_min");
  if (quality_latent_dim > map_dim) throw std::invalid_argument("noise model: quality_latent_dim exceeds map_dim");
  if (quality_latent_dim > dim) throw std::invalid_argument("noise model: quality_latent_dim exceeds dim");
}

LatentLayout latent_layout(std::size_t map_dim, std::size_t quality_latent_dim) {
  if (quality_latent_dim > map_dim) throw std::invalid_argument("quality_latent_dim exceeds map_dim");
  return {map_dim - quality_latent_dim, quality_latent_dim};
}

double encode_noise_scale(double sigma) { return std::log(std::max(sigma, kNoiseScaleFloor)); }

double decode_noise_scale(double latent) { return std::exp(latent); }

Vector make_feature_map(const Matrix& embedding_mix, std::span<const double> embedding,
                        std::span<const double> noise_scales, const LatentLayout& layout) {
  if (embedding_mix.rows() != layout.offset || embedding_mix.cols() != embedding.size()) {
    throw std::invalid_argument("embedding mix does not match latent layout");
  }
  Vector fm(layout.offset + layout.dim, 0.0);
  for (std::size_t k = 0; k < layout.offset; ++k) fm[k] = dot(embedding_mix.row(k), embedding);
  for (std::size_t j = 0; j < layout.dim; ++j) fm[layout.offset + j] = encode_noise_scale(noise_scales[j]);
  return fm;
}

SyntheticDataset generate(const NoiseModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const LatentLayout layout = latent_layout(cfg.map_dim, cfg.quality_latent_dim);

  SyntheticDataset ds;
  ds.config = cfg;
  ds.embedding_mix = Matrix(layout.offset, d);
  {
    std::mt19937_64 mix_rng(cfg.mix_seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    for (auto& v : ds.embedding_mix.data()) v = normal(mix_rng);
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> scale(cfg.sigma_min, cfg.sigma_max);
  const std::size_t n = cfg.instances_per_subject;

  ds.subjects.resize(cfg.n_subjects);
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    auto& subj = ds.subjects[s];
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", s);
    subj.id = id;
    subj.mean.resize(d);
    for (auto& m : subj.mean) m = std_normal(rng);
    subj.noise_scales = Matrix(n, d);
    subj.noise = Matrix(n, d);
    subj.instances.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Vector emb(d);
      for (std::size_t j = 0; j < d; ++j) {
        // uniform_real_distribution(a, a) is undefined; pin degenerate ranges
        const double sigma = cfg.sigma_max > cfg.sigma_min ? scale(rng) : cfg.sigma_min;
        const double eps = sigma * std_normal(rng);
        subj.noise_scales(i, j) = sigma;
        subj.noise(i, j) = eps;
        emb[j] = subj.mean[j] + eps;
      }
      subj.instances[i].feature_map = make_feature_map(ds.embedding_mix, emb, subj.noise_scales.row(i), layout);
      subj.instances[i].embedding = std::move(emb);
    }
  }
  return ds;
}

Matrix oracle_weights(const Matrix& noise_scales) {
  const std::size_t n = noise_scales.rows();
  const std::size_t d = noise_scales.cols();
  if (n == 0) throw std::invalid_argument("empty set");
  Matrix w(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (noise_scales(i, j) < 0.0) throw std::invalid_argument("negative noise scale");
      if (noise_scales(i, j) == 0.0) ++zeros;
    }
    if (zeros > 0) {
      for (std::size_t i = 0; i < n; ++i)
        w(i, j) = noise_scales(i, j) == 0.0 ? 1.0 / static_cast<double>(zeros) : 0.0;
      continue;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = noise_scales(i, j);
      w(i, j) = 1.0 / (s * s);
      total += w(i, j);
    }
    for (std::size_t i = 0; i < n; ++i) w(i, j) /= total;
  }
  return w;
}

Vector oracle_pool(const Matrix& embeddings, const Matrix& noise_scales) {
  if (embeddings.rows() != noise_scales.rows() || embeddings.cols() != noise_scales.cols()) {
    throw std::invalid_argument("oracle_pool: embeddings and noise scales differ in shape");
  }
  const Matrix w = oracle_weights(noise_scales);
  Vector r(embeddings.cols(), 0.0);
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    for (std::size_t j = 0; j < embeddings.cols(); ++j) r[j] += w(i, j) * embeddings(i, j);
  return r;
}

Matrix intra_class_correlation(const std::vector<Matrix>& per_subject) {
  std::size_t d = 0;
  std::size_t samples = 0;
  for (const auto& g : per_subject) {
    if (g.rows() < 2) continue;
    if (d == 0) d = g.cols();
    if (g.cols() != d) throw std::invalid_argument("intra_class_correlation: dimension mismatch");
    samples += g.rows();
  }
  if (samples == 0) throw std::invalid_argument("intra_class_correlation: need a subject with >= 2 instances");

  // Pooled residuals, each subject centered on its own mean.
  Matrix res(samples, d);
  std::size_t at = 0;
  for (const auto& g : per_subject) {
    if (g.rows() < 2) continue;
    Vector mean(d, 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += g(i, j);
    for (auto& m : mean) m /= static_cast<double>(g.rows());
    for (std::size_t i = 0; i < g.rows(); ++i, ++at)
      for (std::size_t j = 0; j < d; ++j) res(at, j) = g(i, j) - mean[j];
  }

  Vector pooled_mean(d, 0.0);
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t j = 0; j < d; ++j) pooled_mean[j] += res(i, j);
  for (auto& m : pooled_mean) m /= static_cast<double>(samples);
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t j = 0; j < d; ++j) res(i, j) -= pooled_mean[j];

  Matrix cov(d, d);
  for (std::size_t i = 0; i < samples; ++i) {
    const auto r = res.row(i);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov(a, b) += r[a] * r[b];
  }

  Matrix corr(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    corr(a, a) = 1.0;
    for (std::size_t b = a + 1; b < d; ++b) {
      const double denom = std::sqrt(cov(a, a) * cov(b, b));
      const double c = denom > 0.0 ? std::min(1.0, std::abs(cov(a, b)) / denom) : 0.0;
      corr(a, b) = c;
      corr(b, a) = c;
    }
  }
  return corr;
}

Matrix intra_class_correlation(const SyntheticDataset& ds) {
  std::vector<Matrix> groups;
  groups.reserve(ds.subjects.size());
  for (const auto& s : ds.subjects) groups.push_back(stack_embeddings(s.instances));
  return intra_class_correlation(groups);
}

}  // namespace cfan
