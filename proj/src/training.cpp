#include "cfan/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cfan {

void TrainConfig::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (subjects_per_batch < 2) throw std::invalid_argument("subjects_per_batch must be >= 2");
  if (templates_per_subject < 2) throw std::invalid_argument("templates_per_subject must be >= 2");
  if (images_per_template < 1) throw std::invalid_argument("images_per_template must be >= 1");
  if (!(noise_augment_sigma >= 0.0)) throw std::invalid_argument("noise_augment_sigma must be >= 0");
  if (!(bn_eps > 0.0)) throw std::invalid_argument("bn_eps must be > 0");
}

TrainingPool make_training_pool(const SyntheticDataset& ds) {
  TrainingPool pool;
  pool.reserve(ds.subjects.size());
  for (const auto& s : ds.subjects) pool.push_back({s.id, s.instances});
  return pool;
}

namespace {

// First k entries of a Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

Batch sample_batch(const TrainingPool& pool, const TrainConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (pool.size() < cfg.subjects_per_batch) {
    throw std::invalid_argument("training pool has " + std::to_string(pool.size()) +
                                " subjects, batch needs " + std::to_string(cfg.subjects_per_batch));
  }
  const std::size_t per_subject = cfg.templates_per_subject * cfg.images_per_template;
  for (const auto& s : pool) {
    if (s.instances.size() < per_subject) {
      throw std::invalid_argument("subject '" + s.id + "' has " + std::to_string(s.instances.size()) +
                                  " instances, batch needs " + std::to_string(per_subject));
    }
  }

  std::size_t map_dim = 0;
  for (const auto& s : pool) {
    if (!s.instances.empty()) {
      map_dim = s.instances.front().feature_map.size();
      break;
    }
  }
  const LatentLayout layout = latent_layout(map_dim, cfg.quality_latent_dim);

  Batch batch;
  const auto subjects = draw_without_replacement(pool.size(), cfg.subjects_per_batch, rng);
  for (std::size_t label = 0; label < subjects.size(); ++label) {
    const auto& subj = pool[subjects[label]];
    const auto picks = draw_without_replacement(subj.instances.size(), per_subject, rng);
    for (std::size_t t = 0; t < cfg.templates_per_subject; ++t) {
      Template tmpl;
      tmpl.subject_id = subj.id;
      tmpl.template_id = "b" + std::to_string(t);
      for (std::size_t k = 0; k < cfg.images_per_template; ++k) {
        const auto& inst = subj.instances[picks[t * cfg.images_per_template + k]];
        tmpl.instances.push_back(cfg.noise_augment_sigma > 0.0
                                     ? augment_noise(inst, cfg.noise_augment_sigma, rng, layout)
                                     : inst);
      }
      batch.templates.push_back(std::move(tmpl));
      batch.labels.push_back(label);
    }
  }
  return batch;
}

std::vector<Triplet> mine_hard_triplets(const Matrix& reps, std::span<const std::size_t> labels) {
  if (labels.size() != reps.rows()) throw std::invalid_argument("one label per representation required");
  const std::size_t t = reps.rows();
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < t; ++a) {
    std::size_t pos = t;
    std::size_t neg = t;
    double pos_d = -1.0;
    double neg_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < t; ++k) {
      if (k == a) continue;
      const double d = squared_euclidean(reps.row(a), reps.row(k));
      if (labels[k] == labels[a]) {
        if (d > pos_d) {
          pos_d = d;
          pos = k;
        }
      } else if (d < neg_d) {
        neg_d = d;
        neg = k;
      }
    }
    if (pos < t && neg < t) out.push_back({a, pos, neg});
  }
  return out;
}

std::vector<Triplet> mine_all_triplets(std::span<const std::size_t> labels) {
  const std::size_t t = labels.size();
  std::vector<Triplet> out;
  for (std::size_t a = 0; a < t; ++a)
    for (std::size_t p = 0; p < t; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < t; ++n)
        if (labels[n] != labels[a]) out.push_back({a, p, n});
    }
  return out;
}

TripletLoss triplet_loss(const Matrix& reps, const std::vector<Triplet>& triplets, double alpha) {
  TripletLoss out{0.0, Matrix(reps.rows(), reps.cols()), 0};
  const std::size_t d = reps.cols();
  for (const auto& tr : triplets) {
    if (tr.anchor >= reps.rows() || tr.positive >= reps.rows() || tr.negative >= reps.rows()) {
      throw std::invalid_argument("triplet index out of range");
    }
    const auto a = reps.row(tr.anchor);
    const auto p = reps.row(tr.positive);
    const auto n = reps.row(tr.negative);
    const double arg = alpha + squared_euclidean(a, p) - squared_euclidean(a, n);
    if (arg <= 0.0) continue;
    out.loss += arg;
    ++out.active;
    auto ga = out.dreps.row(tr.anchor);
    auto gp = out.dreps.row(tr.positive);
    auto gn = out.dreps.row(tr.negative);
    for (std::size_t j = 0; j < d; ++j) {
      ga[j] += 2.0 * (n[j] - p[j]);
      gp[j] += 2.0 * (p[j] - a[j]);
      gn[j] -= 2.0 * (n[j] - a[j]);
    }
  }
  return out;
}

OptimizerState OptimizerState::zeros_like(const QualityHead& head) {
  return {Vector(head.map_dim(), 0.0), Vector(head.map_dim(), 0.0),
          Matrix(head.fc.weight.rows(), head.fc.weight.cols()), Vector(head.fc.bias.size(), 0.0)};
}

BatchEvaluation evaluate_batch(const Batch& batch, const QualityHead& head, const TrainConfig& cfg) {
  const std::size_t n_templates = batch.templates.size();
  if (batch.labels.size() != n_templates) throw std::invalid_argument("batch labels/templates mismatch");
  const std::size_t d = head.embedding_dim;

  std::vector<FeatureInstance> all;
  std::vector<std::size_t> offsets(n_templates + 1, 0);
  for (std::size_t t = 0; t < n_templates; ++t) {
    const auto& inst = batch.templates[t].instances;
    if (inst.empty()) throw std::invalid_argument("training templates must be non-empty");
    all.insert(all.end(), inst.begin(), inst.end());
    offsets[t + 1] = all.size();
  }

  BatchEvaluation ev;
  ev.forward = quality_forward(stack_feature_maps(all), head, BnStats::train);
  const Matrix emb = stack_embeddings(all);
  if (emb.cols() != d) throw std::invalid_argument("batch embedding dim does not match head");

  Matrix reps(n_templates, d);
  Vector norms(n_templates, 1.0);
  std::vector<CfanPoolCache> caches(n_templates);
  // Templates are independent; each iteration writes only its own slots.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(n_templates); ++ti) {
    const auto t = static_cast<std::size_t>(ti);
    const std::size_t lo = offsets[t];
    const std::size_t cnt = offsets[t + 1] - lo;
    Matrix f(cnt, d);
    Matrix q(cnt, d);
    for (std::size_t i = 0; i < cnt; ++i) {
      std::copy(emb.row(lo + i).begin(), emb.row(lo + i).end(), f.row(i).begin());
      std::copy(ev.forward.q.row(lo + i).begin(), ev.forward.q.row(lo + i).end(), q.row(i).begin());
    }
    const auto r = pool_cfan(f, q, &caches[t]);
    std::copy(r.vector.begin(), r.vector.end(), reps.row(t).begin());
  }

  Matrix used = reps;
  if (cfg.normalize_reps) {
    for (std::size_t t = 0; t < n_templates; ++t) {
      norms[t] = l2_norm(reps.row(t));
      if (norms[t] == 0.0) throw std::runtime_error("cannot normalize zero template representation");
      for (auto& v : used.row(t)) v /= norms[t];
    }
  }

  const auto triplets = cfg.mining == MiningStrategy::batch_hard ? mine_hard_triplets(used, batch.labels)
                                                                  : mine_all_triplets(batch.labels);
  auto tl = triplet_loss(used, triplets, cfg.alpha);
  ev.loss = tl.loss;
  ev.n_triplets = triplets.size();
  ev.active_triplets = tl.active;

  Matrix dreps = std::move(tl.dreps);
  if (cfg.normalize_reps) {
    for (std::size_t t = 0; t < n_templates; ++t) {
      auto g = dreps.row(t);
      const auto u = used.row(t);
      const double proj = dot(u, g);
      for (std::size_t j = 0; j < d; ++j) g[j] = (g[j] - u[j] * proj) / norms[t];
    }
  }

  Matrix dq(all.size(), d);
  for (std::size_t t = 0; t < n_templates; ++t) {
    const auto g = pool_cfan_backward(dreps.row(t), caches[t]);
    for (std::size_t i = 0; i < g.dqualities.rows(); ++i) {
      const auto src = g.dqualities.row(i);
      std::copy(src.begin(), src.end(), dq.row(offsets[t] + i).begin());
    }
  }
  ev.grads = quality_backward(dq, ev.forward, head);
  return ev;
}

namespace {

void sgd_apply(std::span<double> theta, std::span<const double> grad, std::span<double> velocity,
               const TrainConfig& cfg) {
  for (std::size_t k = 0; k < theta.size(); ++k) {
    velocity[k] = cfg.momentum * velocity[k] - cfg.lr * (grad[k] + cfg.weight_decay * theta[k]);
    theta[k] += velocity[k];
  }
}

}  // namespace

void sgd_update(QualityHead& head, const QualityHeadGrads& grads, OptimizerState& opt, const TrainConfig& cfg) {
  sgd_apply(head.bn.gamma, grads.dgamma, opt.v_gamma, cfg);
  sgd_apply(head.bn.beta, grads.dbeta, opt.v_beta, cfg);
  sgd_apply(head.fc.weight.data(), grads.dweight.data(), opt.v_weight.data(), cfg);
  sgd_apply(head.fc.bias, grads.dbias, opt.v_bias, cfg);
}

StepResult train_step(const Batch& batch, QualityHead& head, OptimizerState& opt, const TrainConfig& cfg) {
  auto ev = evaluate_batch(batch, head, cfg);
  if (!std::isfinite(ev.loss)) {
    throw std::runtime_error("non-finite loss " + std::to_string(ev.loss) + " with " +
                             std::to_string(ev.active_triplets) + "/" + std::to_string(ev.n_triplets) +
                             " active triplets; lower lr");
  }
  sgd_update(head, ev.grads, opt, cfg);
  update_running_stats(head, ev.forward);
  return {ev.loss, ev.active_triplets};
}

std::string format_log_line(const TrainLogEntry& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "step %zu loss %.17g active_triplets %zu", e.step, e.loss, e.active_triplets);
  return buf;
}

TrainResult train(const TrainingPool& pool, std::size_t map_dim, std::size_t embedding_dim,
                  const TrainConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  TrainResult res;
  res.head = QualityHead::initialize(map_dim, embedding_dim, cfg.head_mode, rng);
  res.head.bn.eps = cfg.bn_eps;
  auto opt = OptimizerState::zeros_like(res.head);
  res.log.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Batch batch = sample_batch(pool, cfg, rng);
    const auto r = train_step(batch, res.head, opt, cfg);
    res.log.push_back({step, r.loss, r.active_triplets});
  }
  return res;
}

FeatureInstance augment_noise(const FeatureInstance& instance, double sigma, std::mt19937_64& rng,
                              const LatentLayout& layout) {
  if (sigma == 0.0) return instance;
  if (!(sigma > 0.0)) throw std::invalid_argument("augmentation sigma must be >= 0");
  if (layout.offset + layout.dim > instance.feature_map.size() || layout.dim > instance.embedding.size()) {
    throw std::invalid_argument("latent layout does not fit the instance");
  }
  FeatureInstance out = instance;
  std::normal_distribution<double> normal(0.0, sigma);
  for (std::size_t j = 0; j < out.embedding.size(); ++j) {
    const double n = normal(rng);
    out.embedding[j] += n;
    if (j < layout.dim) {
      double& latent = out.feature_map[layout.offset + j];
      const double old = decode_noise_scale(latent);
      latent = encode_noise_scale(std::sqrt(old * old + n * n));
    }
  }
  return out;
}

}  // namespace cfan
