#pragma once

#include <vector>

#include "cfan/aggregation.hpp"
#include "cfan/core_math.hpp"

// Data-parallel kernels. Each has a serial reference that tests compare
// against; the OpenMP versions partition the outer loop only, so every
// output element is computed by exactly the same arithmetic.
namespace cfan::kernels {

Matrix score_matrix_serial(const Matrix& probes, const Matrix& gallery);
Matrix score_matrix_parallel(const Matrix& probes, const Matrix& gallery);

std::vector<AggregatedRep> aggregate_templates_serial(const std::vector<Template>& templates,
                                                      const QualityHead* head, PoolingMode mode,
                                                      std::size_t embedding_dim);
std::vector<AggregatedRep> aggregate_templates_parallel(const std::vector<Template>& templates,
                                                        const QualityHead* head, PoolingMode mode,
                                                        std::size_t embedding_dim);

int max_threads();

}  // namespace cfan::kernels
