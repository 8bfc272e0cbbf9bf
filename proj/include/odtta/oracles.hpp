#pragma once

#include <functional>
#include <span>
#include <vector>

#include "odtta/nn.hpp"

namespace odtta {

// Central-difference estimate of d(loss)/d(gamma, beta) for every BN
// layer. Uses only the forward pass, so it is independent of the
// hand-written reverse pass it verifies.
std::vector<BnAffineGrad> oracle_finite_diff(const Model& model, const Tensor& batch, BnMode mode,
                                             const std::function<double(const Tensor& logits)>& loss,
                                             double step = 1e-5);

struct ExhaustiveKMeans {
    std::vector<std::size_t> assignment;
    double inertia = 0.0;
};

// Globally optimal k-clustering by inertia, via enumeration of set
// partitions into at most k blocks. Limited to 10 points.
ExhaustiveKMeans oracle_kmeans_exhaustive(const std::vector<std::vector<double>>& points,
                                          std::size_t k);

// True when the assignment is a Lloyd fixed point: every point sits with
// its nearest cluster mean.
bool is_kmeans_local_optimum(const std::vector<std::vector<double>>& points,
                             const std::vector<std::size_t>& assignment, std::size_t k,
                             double tol = 1e-9);

double pearson(std::span<const double> xs, std::span<const double> ys);

double relative_error(double got, double want, double floor = 1e-6);

} // namespace odtta
