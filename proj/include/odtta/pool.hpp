#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "odtta/batchnorm.hpp"
#include "odtta/counters.hpp"
#include "odtta/nn.hpp"
#include "odtta/tensor.hpp"

namespace odtta {

enum class FeatureSource { CandidateStored, StreamEstimated };

// Mean post-BN activation of the feature layer: the domain representation
// used both for candidate storage and for nearest-candidate queries.
struct DomainFeature {
    std::vector<double> vector;
    FeatureSource source = FeatureSource::StreamEstimated;
};

struct Provenance {
    enum class Kind { InitialCluster, Progressive, SourceModel };
    Kind kind = Kind::SourceModel;
    std::size_t index = 0; // cluster index / adaptation index

    bool operator==(const Provenance&) const = default;
};

struct Candidate {
    std::size_t id = 0;
    BnSnapshot snap;
    DomainFeature feature;
    Provenance provenance;
};

// Mean over K = floor(N / batch_size) batch means of the post-BN
// activations at the feature layer (1-based BN ordinal), each batch
// normalized by its own statistics. Leftover samples are discarded; no
// backward pass is involved, so the retained-activation footprint equals a
// plain forward. Throws when N < batch_size or the model lacks the layer.
DomainFeature extract_feature(const Model& model, const Tensor& samples,
                              std::size_t batch_size = 16, std::size_t feature_layer = 2,
                              ResourceCounters* counters = nullptr);

// Stored BN snapshots serving as adaptation starting points. The pool
// carries the source model's BN snapshot as the fixed reference frame for
// feature extraction: candidate features and runtime queries are all
// extracted under it, so distances compare like with like no matter what
// the deployed model currently looks like.
class CandidatePool {
public:
    CandidatePool() = default;
    CandidatePool(BnSnapshot reference, std::size_t feature_layer_index = 2,
                  std::size_t capacity = 64);

    // nearest candidate by L2 feature distance, ties broken by lowest id
    const Candidate& select(const DomainFeature& query) const;

    // appends with Progressive provenance; evicts the oldest Progressive
    // candidate when full (initial-cluster and source candidates are never
    // evicted). Returns the new candidate's id.
    std::size_t add_progressive(const BnSnapshot& snap, DomainFeature feature);

    // pool-construction insert (initial clusters, source model)
    std::size_t add_candidate(const BnSnapshot& snap, DomainFeature feature, Provenance prov);

    const std::vector<Candidate>& candidates() const { return candidates_; }
    std::size_t size() const { return candidates_.size(); }
    bool empty() const { return candidates_.empty(); }
    std::uint64_t fingerprint() const { return reference_.fingerprint; }
    const BnSnapshot& reference() const { return reference_; }
    std::size_t feature_layer_index() const { return feature_layer_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t next_id() const { return next_id_; }

    // estimate a query feature from samples in the pool's reference frame
    DomainFeature query_feature(const Model& deployed, const Tensor& samples,
                                std::size_t batch_size,
                                ResourceCounters* counters = nullptr) const;

    const Candidate* find(std::size_t id) const;
    double distance(const Candidate& c, const DomainFeature& query) const;

    // serialization support: append verbatim, keeping the stored id and
    // skipping capacity eviction
    void restore_candidate(Candidate c);
    void set_next_id(std::size_t id) { next_id_ = id; }

private:
    BnSnapshot reference_;
    std::size_t feature_layer_ = 2;
    std::size_t capacity_ = 64;
    std::size_t next_id_ = 0;
    std::vector<Candidate> candidates_;
};

struct KMeansResult {
    std::vector<std::size_t> assignment;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

// Lloyd iterations (capped at max_iters or relative inertia change < tol)
// over seeded restarts: the first restart uses farthest-point
// initialization, the rest draw k distinct seeded points; lowest final
// inertia wins. Farthest-point alone plants every centroid inside the
// widest cloud when one cluster's diameter exceeds the gaps between the
// others. Empty clusters are repaired by reassigning the point farthest
// from its centroid.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                    std::uint64_t seed, std::size_t max_iters = 100, double tol = 1e-6,
                    std::size_t restarts = 16);

struct PoolBuildConfig {
    std::size_t m_clusters = 4;
    std::size_t supervised_epochs = 2;
    double lr = 0.02;
    std::size_t batch_size = 16;    // supervised fitting + feature extraction
    std::size_t cluster_group = 64; // samples averaged into one clustering point
    double stats_momentum = 0.9;
    std::size_t feature_layer_index = 2;
    std::size_t capacity = 64;
    std::uint64_t seed = 1;
};

struct PoolBuildResult {
    CandidatePool pool;
    // cluster index per retained training sample (trailing samples beyond
    // the last full feature batch are dropped)
    std::vector<std::size_t> assignment;
    std::size_t samples_used = 0;
};

// Initial pool: per-sample features from the feature BN layer, K-Means
// into m_clusters subsets, supervised BN-only fitting per subset, plus one
// source-model candidate. Labels are training data and never leave this
// build step.
PoolBuildResult build_initial_pool(const Model& pretrained, const Tensor& train_x,
                                   std::span<const int> train_y, const PoolBuildConfig& cfg);

} // namespace odtta
