#include "odtta/pool.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "odtta/rng.hpp"
#include "odtta/train.hpp"

namespace odtta {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double c = a[i] - b[i];
        d += c * c;
    }
    return d;
}

} // namespace

DomainFeature extract_feature(const Model& model, const Tensor& samples, std::size_t batch_size,
                              std::size_t feature_layer, ResourceCounters* counters) {
    if (samples.rank() != 2) throw std::invalid_argument("extract_feature: samples must be rank 2");
    if (batch_size < 2) throw std::invalid_argument("extract_feature: batch_size must be >= 2");
    std::size_t n = samples.dim(0);
    if (n < batch_size) throw std::invalid_argument("extract_feature: fewer samples than one batch");
    if (feature_layer == 0 || feature_layer > model.spec.bn_count())
        throw std::invalid_argument("extract_feature: model lacks the feature BN layer");

    // Post-BN activations are read under the model's stored statistics:
    // normalizing each batch by its own statistics would zero out every
    // batch mean and erase the domain signal.
    std::size_t batches = n / batch_size; // leftovers discarded
    std::vector<double> acc;
    for (std::size_t k = 0; k < batches; ++k) {
        Tensor bx = samples.slice_rows(k * batch_size, (k + 1) * batch_size);
        auto tap = forward_bn_tap(model, bx, BnMode::RunningStats, feature_layer);
        if (counters) counters->note_forward(batch_size, tap.cache.retained_count());
        std::size_t d = tap.tapped.dim(1);
        if (acc.empty()) acc.assign(d, 0.0);
        for (std::size_t b = 0; b < batch_size; ++b)
            for (std::size_t j = 0; j < d; ++j) acc[j] += tap.tapped.at(b, j);
    }
    double scale = 1.0 / static_cast<double>(batches * batch_size);
    for (double& v : acc) v *= scale;
    require_finite(acc, "domain feature");
    return {std::move(acc), FeatureSource::StreamEstimated};
}

CandidatePool::CandidatePool(BnSnapshot reference, std::size_t feature_layer_index,
                             std::size_t capacity)
    : reference_(std::move(reference)), feature_layer_(feature_layer_index), capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("pool: zero capacity");
}

DomainFeature CandidatePool::query_feature(const Model& deployed, const Tensor& samples,
                                           std::size_t batch_size,
                                           ResourceCounters* counters) const {
    Model ref = deployed;
    restore(ref, reference_);
    return extract_feature(ref, samples, batch_size, feature_layer_, counters);
}

double CandidatePool::distance(const Candidate& c, const DomainFeature& query) const {
    if (c.feature.vector.size() != query.vector.size())
        throw std::invalid_argument("pool: feature dimension mismatch");
    return std::sqrt(sq_dist(c.feature.vector, query.vector));
}

const Candidate& CandidatePool::select(const DomainFeature& query) const {
    if (candidates_.empty()) throw std::invalid_argument("pool: select on empty pool");
    const Candidate* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& c : candidates_) {
        double d = distance(c, query);
        if (d < best_d || (d == best_d && best && c.id < best->id)) {
            best = &c;
            best_d = d;
        }
    }
    return *best;
}

std::size_t CandidatePool::add_candidate(const BnSnapshot& snap, DomainFeature feature,
                                         Provenance prov) {
    if (snap.fingerprint != reference_.fingerprint)
        throw std::invalid_argument("pool: snapshot fingerprint mismatch");
    if (candidates_.size() >= capacity_) {
        auto victim = std::find_if(candidates_.begin(), candidates_.end(), [](const Candidate& c) {
            return c.provenance.kind == Provenance::Kind::Progressive;
        });
        if (victim == candidates_.end())
            throw std::runtime_error("pool: at capacity with no evictable candidate");
        candidates_.erase(victim); // oldest progressive: insertion order is id order
    }
    Candidate c;
    c.id = next_id_++;
    c.snap = snap;
    c.feature = std::move(feature);
    c.feature.source = prov.kind == Provenance::Kind::Progressive
                           ? FeatureSource::StreamEstimated
                           : FeatureSource::CandidateStored;
    c.provenance = prov;
    candidates_.push_back(std::move(c));
    return candidates_.back().id;
}

std::size_t CandidatePool::add_progressive(const BnSnapshot& snap, DomainFeature feature) {
    std::size_t adaptation_index = 0;
    for (const auto& c : candidates_)
        if (c.provenance.kind == Provenance::Kind::Progressive)
            adaptation_index = std::max(adaptation_index, c.provenance.index + 1);
    return add_candidate(snap, std::move(feature),
                         {Provenance::Kind::Progressive, adaptation_index});
}

void CandidatePool::restore_candidate(Candidate c) {
    if (c.snap.fingerprint != reference_.fingerprint)
        throw std::invalid_argument("pool: snapshot fingerprint mismatch");
    if (candidates_.size() >= capacity_)
        throw std::invalid_argument("pool: restored candidates exceed capacity");
    for (const auto& other : candidates_)
        if (other.id == c.id) throw std::invalid_argument("pool: duplicate candidate id");
    next_id_ = std::max(next_id_, c.id + 1);
    candidates_.push_back(std::move(c));
}

const Candidate* CandidatePool::find(std::size_t id) const {
    for (const auto& c : candidates_)
        if (c.id == id) return &c;
    return nullptr;
}

namespace {

KMeansResult lloyd(const std::vector<std::vector<double>>& points, std::size_t k,
                   const std::vector<std::size_t>& centers, std::size_t max_iters, double tol) {
    std::size_t n = points.size();
    std::size_t dim = points[0].size();
    KMeansResult res;
    res.centroids.resize(k);
    for (std::size_t c = 0; c < k; ++c) res.centroids[c] = points[centers[c]];

    res.assignment.assign(n, 0);
    double prev_inertia = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < max_iters; ++it) {
        res.iterations = it + 1;
        // assign (ties to lowest cluster index)
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = sq_dist(points[i], res.centroids[0]);
            for (std::size_t c = 1; c < k; ++c) {
                double d = sq_dist(points[i], res.centroids[c]);
                if (d < best_d) {
                    best = c;
                    best_d = d;
                }
            }
            res.assignment[i] = best;
        }
        // repair empty clusters with the globally worst-fit point
        std::vector<std::size_t> count(k, 0);
        for (std::size_t a : res.assignment) ++count[a];
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] > 0) continue;
            std::size_t worst = 0;
            double worst_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (count[res.assignment[i]] <= 1) continue;
                double d = sq_dist(points[i], res.centroids[res.assignment[i]]);
                if (d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            --count[res.assignment[worst]];
            res.assignment[worst] = c;
            ++count[c];
        }
        // update
        for (std::size_t c = 0; c < k; ++c)
            std::fill(res.centroids[c].begin(), res.centroids[c].end(), 0.0);
        std::vector<double> denom(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& ctr = res.centroids[res.assignment[i]];
            for (std::size_t j = 0; j < dim; ++j) ctr[j] += points[i][j];
            denom[res.assignment[i]] += 1.0;
        }
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < dim; ++j) res.centroids[c][j] /= denom[c];
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            inertia += sq_dist(points[i], res.centroids[res.assignment[i]]);
        res.inertia = inertia;
        if (prev_inertia < std::numeric_limits<double>::infinity()) {
            double rel = prev_inertia > 0.0 ? (prev_inertia - inertia) / prev_inertia
                                            : std::abs(prev_inertia - inertia);
            if (rel >= 0.0 && rel < tol) break;
        }
        prev_inertia = inertia;
    }
    return res;
}

} // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                    std::uint64_t seed, std::size_t max_iters, double tol, std::size_t restarts) {
    std::size_t n = points.size();
    if (k == 0 || n == 0) throw std::invalid_argument("kmeans: empty input");
    if (k > n) throw std::invalid_argument("kmeans: k exceeds point count");
    if (restarts == 0) throw std::invalid_argument("kmeans: need at least one restart");
    std::size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw std::invalid_argument("kmeans: ragged points");

    Rng rng(seed);
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < restarts; ++r) {
        std::vector<std::size_t> centers;
        if (r == 0) {
            // farthest-point init, first centroid drawn by seed
            centers.push_back(rng.index(n));
            std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
            while (centers.size() < k) {
                for (std::size_t i = 0; i < n; ++i)
                    nearest[i] = std::min(nearest[i], sq_dist(points[i], points[centers.back()]));
                std::size_t far = 0;
                for (std::size_t i = 1; i < n; ++i)
                    if (nearest[i] > nearest[far]) far = i;
                centers.push_back(far);
            }
        } else {
            // k distinct seeded points
            while (centers.size() < k) {
                std::size_t c = rng.index(n);
                if (std::find(centers.begin(), centers.end(), c) == centers.end())
                    centers.push_back(c);
            }
        }
        auto res = lloyd(points, k, centers, max_iters, tol);
        if (res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

namespace {

// One supervised BN-only fitting pass over a cluster subset: cross-entropy
// steps on gamma/beta, batch statistics merged into the running estimates.
void fit_bn_supervised(Model& model, const Tensor& x, std::span<const int> y,
                       const PoolBuildConfig& cfg) {
    std::size_t n = x.dim(0);
    for (std::size_t epoch = 0; epoch < cfg.supervised_epochs; ++epoch) {
        for (std::size_t off = 0; off + cfg.batch_size <= n; off += cfg.batch_size) {
            Tensor bx = x.slice_rows(off, off + cfg.batch_size);
            std::vector<int> by(y.begin() + static_cast<std::ptrdiff_t>(off),
                                y.begin() + static_cast<std::ptrdiff_t>(off + cfg.batch_size));
            auto fwd = forward(model, bx, BnMode::BatchStats, CachePolicy::ForBackward);
            auto ce = train::cross_entropy(fwd.logits, by);
            auto grads = backward_bn_affine(model, fwd.cache, ce.grad_logits);
            for (std::size_t b = 0; b < model.bn.size(); ++b) {
                auto& bn = model.bn[b];
                for (std::size_t j = 0; j < bn.dim(); ++j) {
                    bn.gamma[j] -= cfg.lr * grads[b].gamma[j];
                    bn.beta[j] -= cfg.lr * grads[b].beta[j];
                }
                auto merged = merge_stats(bn.stats(), fwd.cache.bn_stats[b], cfg.stats_momentum);
                bn.running_mean = std::move(merged.mean);
                bn.running_var = std::move(merged.var);
            }
        }
    }
}

} // namespace

PoolBuildResult build_initial_pool(const Model& pretrained, const Tensor& train_x,
                                   std::span<const int> train_y, const PoolBuildConfig& cfg) {
    if (cfg.m_clusters < 2) throw std::invalid_argument("build_initial_pool: m_clusters must be >= 2");
    if (train_x.dim(0) != train_y.size())
        throw std::invalid_argument("build_initial_pool: label count mismatch");

    // clustering features: one point per group of cluster_group samples,
    // the group mean of post-feature-BN activations under the pretrained
    // model's stored statistics. Group means wash out per-class structure
    // (which at this scale dwarfs the domain displacement) while keeping
    // the distribution signature; samples inherit their group's cluster.
    std::size_t group = cfg.cluster_group;
    if (group < 2) throw std::invalid_argument("build_initial_pool: cluster_group must be >= 2");
    std::size_t n_full = (train_x.dim(0) / group) * group;
    if (n_full == 0) throw std::invalid_argument("build_initial_pool: training set smaller than one group");
    std::vector<std::vector<double>> feats;
    feats.reserve(n_full / group);
    for (std::size_t off = 0; off + group <= train_x.dim(0); off += group) {
        Tensor gx = train_x.slice_rows(off, off + group);
        auto tap = forward_bn_tap(pretrained, gx, BnMode::RunningStats, cfg.feature_layer_index);
        std::size_t d = tap.tapped.dim(1);
        std::vector<double> mean(d, 0.0);
        for (std::size_t b = 0; b < group; ++b)
            for (std::size_t j = 0; j < d; ++j) mean[j] += tap.tapped.at(b, j);
        for (double& v : mean) v /= static_cast<double>(group);
        feats.push_back(std::move(mean));
    }

    auto km = kmeans(feats, cfg.m_clusters, hash_u64(cfg.seed, 0x6b6d65616eull));

    PoolBuildResult out;
    out.assignment.resize(n_full);
    for (std::size_t i = 0; i < n_full; ++i) out.assignment[i] = km.assignment[i / group];
    out.samples_used = n_full;
    out.pool = CandidatePool(snapshot(pretrained), cfg.feature_layer_index, cfg.capacity);

    for (std::size_t c = 0; c < cfg.m_clusters; ++c) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < n_full; ++i)
            if (out.assignment[i] == c) rows.push_back(i);
        if (rows.size() < 2 * cfg.batch_size)
            throw std::runtime_error("build_initial_pool: cluster " + std::to_string(c) +
                                     " smaller than 2x batch size");
        Tensor cx = train_x.gather_rows(rows);
        std::vector<int> cy(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) cy[i] = train_y[rows[i]];

        Model candidate = pretrained;
        fit_bn_supervised(candidate, cx, cy, cfg);
        // stored feature: the candidate's own subset seen through the
        // reference frame, matching how runtime queries are extracted
        auto feat = extract_feature(pretrained, cx, cfg.batch_size, cfg.feature_layer_index);
        out.pool.add_candidate(snapshot(candidate), std::move(feat),
                               {Provenance::Kind::InitialCluster, c});
    }

    auto src_feat = extract_feature(pretrained, train_x.slice_rows(0, n_full), cfg.batch_size,
                                    cfg.feature_layer_index);
    out.pool.add_candidate(snapshot(pretrained), std::move(src_feat),
                           {Provenance::Kind::SourceModel, 0});
    return out;
}

} // namespace odtta
