#include "cfan/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfan::kernels {

namespace {

void check_score_dims(const Matrix& probes, const Matrix& gallery) {
  if (probes.rows() > 0 && gallery.rows() > 0 && probes.cols() != gallery.cols()) {
    throw std::invalid_argument("probe and gallery representation dims differ");
  }
}

Vector row_norms(const Matrix& m) {
  Vector n(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) n[i] = l2_norm(m.row(i));
  return n;
}

// Same arithmetic as cosine_similarity, with norms hoisted out of the loop.
inline double cosine_with_norms(std::span<const double> a, double na, std::span<const double> b, double nb) {
  if (na == 0.0 || nb == 0.0) return -1.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace

Matrix score_matrix_serial(const Matrix& probes, const Matrix& gallery) {
  check_score_dims(probes, gallery);
  Matrix s(probes.rows(), gallery.rows());
  for (std::size_t p = 0; p < probes.rows(); ++p)
    for (std::size_t g = 0; g < gallery.rows(); ++g) s(p, g) = cosine_similarity(probes.row(p), gallery.row(g));
  return s;
}

Matrix score_matrix_parallel(const Matrix& probes, const Matrix& gallery) {
  check_score_dims(probes, gallery);
  const Vector pn = row_norms(probes);
  const Vector gn = row_norms(gallery);
  Matrix s(probes.rows(), gallery.rows());
  const auto n_probes = static_cast<std::ptrdiff_t>(probes.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < n_probes; ++pi) {
    const auto p = static_cast<std::size_t>(pi);
    auto out = s.row(p);
    for (std::size_t g = 0; g < gallery.rows(); ++g) out[g] = cosine_with_norms(probes.row(p), pn[p], gallery.row(g), gn[g]);
  }
  return s;
}

std::vector<AggregatedRep> aggregate_templates_serial(const std::vector<Template>& templates,
                                                      const QualityHead* head, PoolingMode mode,
                                                      std::size_t embedding_dim) {
  std::vector<AggregatedRep> out;
  out.reserve(templates.size());
  for (const auto& t : templates) out.push_back(aggregate_template(t, head, mode, embedding_dim));
  return out;
}

std::vector<AggregatedRep> aggregate_templates_parallel(const std::vector<Template>& templates,
                                                        const QualityHead* head, PoolingMode mode,
                                                        std::size_t embedding_dim) {
  std::vector<AggregatedRep> out(templates.size());
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(templates.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t ti = 0; ti < n; ++ti) {
    try {
      out[static_cast<std::size_t>(ti)] =
          aggregate_template(templates[static_cast<std::size_t>(ti)], head, mode, embedding_dim);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace cfan::kernels
