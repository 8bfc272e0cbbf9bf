#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace odtta {

struct Model;

// Per-channel normalization statistics. `var` is elementwise >= 0.
struct BnStats {
    std::vector<double> mean;
    std::vector<double> var;

    std::size_t dim() const { return mean.size(); }
};

// One BN layer: the statistics used for normalization plus the learnable
// affine parameters. These are the two quantity families the adaptation
// pipeline updates through different routes (forward-only vs backprop).
struct BnLayerState {
    std::vector<double> running_mean;
    std::vector<double> running_var; // elementwise >= 0
    std::vector<double> gamma;
    std::vector<double> beta;
    double eps = 1e-5;

    std::size_t dim() const { return gamma.size(); }
    BnStats stats() const { return {running_mean, running_var}; }

    static BnLayerState identity(std::size_t dim, double eps = 1e-5);
    void validate() const;

    bool operator==(const BnLayerState&) const = default;
};

// EMA merge of normalization statistics: history keeps weight `momentum`,
// the new batch contributes (1 - momentum). Throws if momentum is outside
// (0,1), dims mismatch, or batch variance is negative.
BnStats merge_stats(const BnStats& prev, const BnStats& batch, double momentum);

// All BN layers of one model, in model order. The fingerprint ties the
// snapshot to the producing ModelSpec; restore refuses a mismatch.
struct BnSnapshot {
    std::uint64_t fingerprint = 0;
    std::vector<BnLayerState> layers;

    bool operator==(const BnSnapshot&) const = default;
};

BnSnapshot snapshot(const Model& model);
void restore(Model& model, const BnSnapshot& snap);

} // namespace odtta
