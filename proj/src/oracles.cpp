#include "odtta/oracles.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace odtta {

namespace {

double eval_loss(const Model& model, const Tensor& batch, BnMode mode,
                 const std::function<double(const Tensor&)>& loss) {
    auto fwd = forward(model, batch, mode, CachePolicy::None);
    return loss(fwd.logits);
}

} // namespace

std::vector<BnAffineGrad> oracle_finite_diff(const Model& model, const Tensor& batch, BnMode mode,
                                             const std::function<double(const Tensor& logits)>& loss,
                                             double step) {
    Model probe = model;
    std::vector<BnAffineGrad> grads(model.bn.size());
    for (std::size_t b = 0; b < model.bn.size(); ++b) {
        std::size_t d = model.bn[b].dim();
        grads[b].gamma.resize(d);
        grads[b].beta.resize(d);
        for (std::size_t j = 0; j < d; ++j) {
            double orig = probe.bn[b].gamma[j];
            probe.bn[b].gamma[j] = orig + step;
            double up = eval_loss(probe, batch, mode, loss);
            probe.bn[b].gamma[j] = orig - step;
            double down = eval_loss(probe, batch, mode, loss);
            probe.bn[b].gamma[j] = orig;
            grads[b].gamma[j] = (up - down) / (2.0 * step);

            orig = probe.bn[b].beta[j];
            probe.bn[b].beta[j] = orig + step;
            up = eval_loss(probe, batch, mode, loss);
            probe.bn[b].beta[j] = orig - step;
            down = eval_loss(probe, batch, mode, loss);
            probe.bn[b].beta[j] = orig;
            grads[b].beta[j] = (up - down) / (2.0 * step);
        }
    }
    return grads;
}

namespace {

double partition_inertia(const std::vector<std::vector<double>>& points,
                         const std::vector<std::size_t>& assignment, std::size_t k) {
    std::size_t dim = points[0].size();
    std::vector<std::vector<double>> mean(k, std::vector<double>(dim, 0.0));
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j) mean[assignment[i]][j] += points[i][j];
        count[assignment[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c)
        if (count[c] > 0.0)
            for (std::size_t j = 0; j < dim; ++j) mean[c][j] /= count[c];
    double inertia = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            double d = points[i][j] - mean[assignment[i]][j];
            inertia += d * d;
        }
    return inertia;
}

void enumerate_partitions(std::size_t i, std::size_t used,
                          const std::vector<std::vector<double>>& points, std::size_t k,
                          std::vector<std::size_t>& assign, ExhaustiveKMeans& best) {
    if (i == points.size()) {
        double inertia = partition_inertia(points, assign, k);
        if (inertia < best.inertia) {
            best.inertia = inertia;
            best.assignment = assign;
        }
        return;
    }
    // canonical labeling: a point may open at most one new block
    std::size_t limit = std::min(used + 1, k);
    for (std::size_t c = 0; c < limit; ++c) {
        assign[i] = c;
        enumerate_partitions(i + 1, std::max(used, c + 1), points, k, assign, best);
    }
}

} // namespace

ExhaustiveKMeans oracle_kmeans_exhaustive(const std::vector<std::vector<double>>& points,
                                          std::size_t k) {
    if (points.empty() || k == 0) throw std::invalid_argument("kmeans oracle: empty input");
    if (points.size() > 10) throw std::invalid_argument("kmeans oracle: too many points");
    ExhaustiveKMeans best;
    best.inertia = std::numeric_limits<double>::infinity();
    if (k >= points.size()) {
        best.assignment.resize(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) best.assignment[i] = i;
        best.inertia = 0.0;
        return best;
    }
    std::vector<std::size_t> assign(points.size(), 0);
    enumerate_partitions(0, 0, points, k, assign, best);
    return best;
}

bool is_kmeans_local_optimum(const std::vector<std::vector<double>>& points,
                             const std::vector<std::size_t>& assignment, std::size_t k,
                             double tol) {
    std::size_t dim = points[0].size();
    std::vector<std::vector<double>> mean(k, std::vector<double>(dim, 0.0));
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = 0; j < dim; ++j) mean[assignment[i]][j] += points[i][j];
        count[assignment[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c)
        if (count[c] > 0.0)
            for (std::size_t j = 0; j < dim; ++j) mean[c][j] /= count[c];
    for (std::size_t i = 0; i < points.size(); ++i) {
        double own = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            double d = points[i][j] - mean[assignment[i]][j];
            own += d * d;
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] == 0.0) continue;
            double other = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                double d = points[i][j] - mean[c][j];
                other += d * d;
            }
            if (other < own - tol) return false;
        }
    }
    return true;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("pearson: need two equal-length series");
    double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double dx = xs[i] - mx, dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson: zero variance");
    return sxy / std::sqrt(sxx * syy);
}

double relative_error(double got, double want, double floor) {
    double denom = std::max({std::abs(got), std::abs(want), floor});
    return std::abs(got - want) / denom;
}

} // namespace odtta
