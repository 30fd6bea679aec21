#include "cfan/aggregation.hpp"

#include <cmath>
#include <stdexcept>

namespace cfan {

std::string_view to_string(PoolingMode mode) {
  switch (mode) {
    case PoolingMode::average: return "average";
    case PoolingMode::instance: return "instance";
    case PoolingMode::cfan: return "cfan";
  }
  return "unknown";
}

PoolingMode parse_pooling_mode(std::string_view name) {
  if (name == "average") return PoolingMode::average;
  if (name == "instance") return PoolingMode::instance;
  if (name == "cfan") return PoolingMode::cfan;
  throw std::invalid_argument("unknown pooling mode '" + std::string(name) + "'");
}

QualityHead QualityHead::initialize(std::size_t map_dim, std::size_t embedding_dim, QualityMode mode,
                                    std::mt19937_64& rng) {
  if (map_dim == 0 || embedding_dim == 0) throw std::invalid_argument("quality head dims must be positive");
  QualityHead h;
  h.mode = mode;
  h.embedding_dim = embedding_dim;
  h.bn.gamma.assign(map_dim, 1.0);
  h.bn.beta.assign(map_dim, 0.0);
  h.running_mean.assign(map_dim, 0.0);
  h.running_var.assign(map_dim, 1.0);
  const std::size_t out = mode == QualityMode::component_wise ? embedding_dim : 1;
  const double bound = 1.0 / std::sqrt(static_cast<double>(map_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  h.fc.weight = Matrix(map_dim, out);
  for (auto& w : h.fc.weight.data()) w = u(rng);
  h.fc.bias.assign(out, 0.0);
  return h;
}

void QualityHead::validate() const {
  const std::size_t m = map_dim();
  if (m == 0) throw std::invalid_argument("quality head has zero map dim");
  if (bn.beta.size() != m || running_mean.size() != m || running_var.size() != m) {
    throw std::invalid_argument("quality head batch-norm vectors disagree in size");
  }
  if (!(bn.eps >= 0.0)) throw std::invalid_argument("batch-norm eps must be nonnegative");
  if (fc.in_dim() != m || fc.bias.size() != fc.out_dim()) {
    throw std::invalid_argument("quality head fc layer does not match map dim");
  }
  const std::size_t expected_out = mode == QualityMode::component_wise ? embedding_dim : 1;
  if (fc.out_dim() != expected_out) {
    throw std::invalid_argument("quality head fc output dim " + std::to_string(fc.out_dim()) +
                                " does not match mode (expected " + std::to_string(expected_out) + ")");
  }
}

QualityForward quality_forward(const Matrix& maps, const QualityHead& head, BnStats stats) {
  if (maps.rows() == 0) throw std::invalid_argument("empty set");
  QualityForward f;
  f.stats = stats;
  if (stats == BnStats::train) {
    auto bn = batchnorm_forward(maps, head.bn);
    f.bn_out = std::move(bn.y);
    f.bn_cache = std::move(bn.cache);
    f.batch_mean = std::move(bn.mean);
    f.batch_var = std::move(bn.var);
  } else {
    f.bn_out = batchnorm_apply(maps, head.bn, head.running_mean, head.running_var);
  }
  Matrix raw = linear_forward(f.bn_out, head.fc);
  if (head.mode == QualityMode::component_wise) {
    f.q = std::move(raw);
  } else {
    f.q = Matrix(raw.rows(), head.embedding_dim);
    for (std::size_t i = 0; i < raw.rows(); ++i)
      for (std::size_t j = 0; j < head.embedding_dim; ++j) f.q(i, j) = raw(i, 0);
  }
  return f;
}

QualityHeadGrads quality_backward(const Matrix& dq, const QualityForward& fwd, const QualityHead& head) {
  if (fwd.stats != BnStats::train) throw std::logic_error("quality_backward needs a train-stats forward");
  if (dq.rows() != fwd.q.rows() || dq.cols() != fwd.q.cols()) {
    throw std::invalid_argument("quality_backward: gradient shape mismatch");
  }
  Matrix draw;
  if (head.mode == QualityMode::component_wise) {
    draw = dq;
  } else {
    draw = Matrix(dq.rows(), 1);
    for (std::size_t i = 0; i < dq.rows(); ++i) {
      double s = 0.0;
      for (double v : dq.row(i)) s += v;
      draw(i, 0) = s;
    }
  }
  auto lin = linear_backward(fwd.bn_out, draw, head.fc);
  auto bn = batchnorm_backward(lin.dx, fwd.bn_cache);
  return {std::move(bn.dgamma), std::move(bn.dbeta), std::move(lin.dweight), std::move(lin.dbias)};
}

void update_running_stats(QualityHead& head, const QualityForward& fwd) {
  if (fwd.stats != BnStats::train) return;
  const double m = head.bn_momentum;
  for (std::size_t j = 0; j < head.map_dim(); ++j) {
    head.running_mean[j] = m * head.running_mean[j] + (1.0 - m) * fwd.batch_mean[j];
    head.running_var[j] = m * head.running_var[j] + (1.0 - m) * fwd.batch_var[j];
  }
}

AggregatedRep pool_average(const Matrix& embeddings) {
  AggregatedRep r{Vector(embeddings.cols(), 0.0), PoolingMode::average, embeddings.rows()};
  if (embeddings.rows() == 0) return r;
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    for (std::size_t j = 0; j < embeddings.cols(); ++j) r.vector[j] += embeddings(i, j);
  for (auto& v : r.vector) v /= static_cast<double>(embeddings.rows());
  return r;
}

AggregatedRep pool_instance(const Matrix& embeddings, std::span<const double> scalars) {
  if (scalars.size() != embeddings.rows()) {
    throw std::invalid_argument("pool_instance: one scalar per instance required");
  }
  AggregatedRep r{Vector(embeddings.cols(), 0.0), PoolingMode::instance, embeddings.rows()};
  if (embeddings.rows() == 0) return r;
  Matrix q(scalars.size(), 1, Vector(scalars.begin(), scalars.end()));
  const Matrix w = softmax_over_set(q);
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    for (std::size_t j = 0; j < embeddings.cols(); ++j) r.vector[j] += w(i, 0) * embeddings(i, j);
  return r;
}

AggregatedRep pool_cfan(const Matrix& embeddings, const Matrix& qualities, CfanPoolCache* cache) {
  AggregatedRep r{Vector(embeddings.cols(), 0.0), PoolingMode::cfan, embeddings.rows()};
  if (embeddings.rows() == 0) return r;
  if (qualities.rows() != embeddings.rows() || qualities.cols() != embeddings.cols()) {
    throw std::invalid_argument("pool_cfan: quality and embedding shapes differ");
  }
  Matrix w = softmax_over_set(qualities);
  for (std::size_t i = 0; i < embeddings.rows(); ++i)
    for (std::size_t j = 0; j < embeddings.cols(); ++j) r.vector[j] += w(i, j) * embeddings(i, j);
  if (cache != nullptr) {
    cache->embeddings = embeddings;
    cache->weights = std::move(w);
  }
  return r;
}

CfanPoolGrads pool_cfan_backward(std::span<const double> drep, const CfanPoolCache& cache) {
  const Matrix& f = cache.embeddings;
  const Matrix& w = cache.weights;
  if (drep.size() != f.cols() || w.rows() != f.rows() || w.cols() != f.cols()) {
    throw std::invalid_argument("pool_cfan_backward: cache/gradient shape mismatch");
  }
  const std::size_t n = f.rows();
  const std::size_t d = f.cols();
  CfanPoolGrads g{Matrix(n, d), Matrix(n, d)};
  for (std::size_t j = 0; j < d; ++j) {
    // dL/dw_ij = f_ij * dR_j; softmax Jacobian: dq_ij = w_ij (dw_ij - sum_k w_kj dw_kj)
    double weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) weighted += w(i, j) * f(i, j) * drep[j];
    for (std::size_t i = 0; i < n; ++i) {
      g.dembeddings(i, j) = w(i, j) * drep[j];
      g.dqualities(i, j) = w(i, j) * (f(i, j) * drep[j] - weighted);
    }
  }
  return g;
}

Matrix stack_feature_maps(const std::vector<FeatureInstance>& instances) {
  if (instances.empty()) return {};
  Matrix m(instances.size(), instances.front().feature_map.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& fm = instances[i].feature_map;
    if (fm.size() != m.cols()) throw std::invalid_argument("feature_map dims differ within template");
    std::copy(fm.begin(), fm.end(), m.row(i).begin());
  }
  return m;
}

Matrix stack_embeddings(const std::vector<FeatureInstance>& instances) {
  if (instances.empty()) return {};
  Matrix m(instances.size(), instances.front().embedding.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& e = instances[i].embedding;
    if (e.size() != m.cols()) throw std::invalid_argument("embedding dims differ within template");
    std::copy(e.begin(), e.end(), m.row(i).begin());
  }
  return m;
}

AggregatedRep aggregate_template(const Template& t, const QualityHead* head, PoolingMode mode,
                                 std::size_t embedding_dim) {
  if (mode != PoolingMode::average) {
    if (head == nullptr) {
      throw std::invalid_argument(std::string(to_string(mode)) + " pooling requires a quality head");
    }
    const QualityMode want =
        mode == PoolingMode::cfan ? QualityMode::component_wise : QualityMode::instance_scalar;
    if (head->mode != want) {
      throw std::invalid_argument("quality head mode does not match pooling mode " +
                                  std::string(to_string(mode)));
    }
    if (head->embedding_dim != embedding_dim) {
      throw std::invalid_argument("quality head embedding dim does not match template");
    }
  }
  if (t.instances.empty()) return {Vector(embedding_dim, 0.0), mode, 0};

  const Matrix emb = stack_embeddings(t.instances);
  if (emb.cols() != embedding_dim) throw std::invalid_argument("template embedding dim mismatch");
  switch (mode) {
    case PoolingMode::average:
      return pool_average(emb);
    case PoolingMode::instance: {
      const auto fwd = quality_forward(stack_feature_maps(t.instances), *head, BnStats::frozen);
      Vector scalars(emb.rows());
      for (std::size_t i = 0; i < emb.rows(); ++i) scalars[i] = fwd.q(i, 0);
      return pool_instance(emb, scalars);
    }
    case PoolingMode::cfan: {
      const auto fwd = quality_forward(stack_feature_maps(t.instances), *head, BnStats::frozen);
      return pool_cfan(emb, fwd.q);
    }
  }
  throw std::logic_error("unreachable pooling mode");
}

}  // namespace cfan
