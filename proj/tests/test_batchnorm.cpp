#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "odtta/batchnorm.hpp"
#include "odtta/serialize.hpp"

using namespace odtta;
using namespace odtta::testing;

TEST_CASE("merge_stats fixed point and direct convex combination") {
    BnStats s{{1.0, -2.0}, {0.5, 3.0}};
    auto same = merge_stats(s, s, 0.9);
    CHECK(same.mean == s.mean);
    CHECK(same.var == s.var);

    BnStats prev{{0.0}, {1.0}};
    BnStats batch{{1.0}, {1.0}};
    auto merged = merge_stats(prev, batch, 0.9);
    CHECK(merged.mean[0] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("merge_stats validates inputs") {
    BnStats a{{0.0}, {1.0}};
    BnStats b{{1.0}, {1.0}};
    CHECK_THROWS_AS(merge_stats(a, b, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(merge_stats(a, b, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(merge_stats(a, b, -0.5), std::invalid_argument);
    BnStats neg{{1.0}, {-0.1}};
    CHECK_THROWS_AS(merge_stats(a, neg, 0.9), std::invalid_argument);
    BnStats wide{{1.0, 2.0}, {1.0, 1.0}};
    CHECK_THROWS_AS(merge_stats(a, wide, 0.9), std::invalid_argument);
}

TEST_CASE("repeated merging converges toward the population statistic") {
    // simulation oracle, fixed seed: batches of 16 from N(2, 1)
    Rng rng(4242);
    BnStats s{{0.0}, {1.0}};
    for (int k = 0; k < 50; ++k) {
        double mean = 0.0, var = 0.0;
        double xs[16];
        for (auto& x : xs) x = 2.0 + rng.normal();
        for (double x : xs) mean += x;
        mean /= 16.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= 16.0;
        s = merge_stats(s, {{mean}, {var}}, 0.9);
    }
    CHECK(std::abs(s.mean[0] - 2.0) < 0.15);
    CHECK(s.var[0] > 0.0);
}

TEST_CASE("merge linearity within 1e-12") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t d = 1 + rng.index(6);
        auto vec = [&](double lo, double hi) {
            std::vector<double> v(d);
            for (auto& x : v) x = rng.uniform(lo, hi);
            return v;
        };
        BnStats a{vec(-2, 2), vec(0, 3)}, b{vec(-2, 2), vec(0, 3)};
        BnStats a2{vec(-2, 2), vec(0, 3)}, b2{vec(-2, 2), vec(0, 3)};
        double m = rng.uniform(0.05, 0.95);
        auto lhs_a = merge_stats(a, b, m);
        auto lhs_b = merge_stats(a2, b2, m);
        BnStats sum_in{a.mean, a.var};
        for (std::size_t j = 0; j < d; ++j) {
            sum_in.mean[j] += a2.mean[j];
            sum_in.var[j] += a2.var[j];
        }
        BnStats sum_batch{b.mean, b.var};
        for (std::size_t j = 0; j < d; ++j) {
            sum_batch.mean[j] += b2.mean[j];
            sum_batch.var[j] += b2.var[j];
        }
        auto rhs = merge_stats(sum_in, sum_batch, m);
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(lhs_a.mean[j] + lhs_b.mean[j] == doctest::Approx(rhs.mean[j]).epsilon(1e-12));
            CHECK(lhs_a.var[j] + lhs_b.var[j] == doctest::Approx(rhs.var[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("geometric forgetting bound") {
    Rng rng(99);
    BnStats s{{rng.normal() * 3}, {2.5}};
    BnStats target{{rng.normal()}, {0.7}};
    double m = 0.85;
    double gap0 = std::abs(s.mean[0] - target.mean[0]);
    for (int t = 1; t <= 40; ++t) {
        s = merge_stats(s, target, m);
        CHECK(std::abs(s.mean[0] - target.mean[0]) <= std::pow(m, t) * gap0 + 1e-12);
    }
}

TEST_CASE("snapshot/restore round trip is bit identical") {
    Model m = tiny_model(5);
    Tensor batch = random_batch(6, 4, 1);
    auto before = forward(m, batch, BnMode::RunningStats, CachePolicy::None);
    auto snap = snapshot(m);
    // scribble on the BN state, then restore
    Model scratch = m;
    for (auto& bn : scratch.bn) {
        for (auto& g : bn.gamma) g *= 1.5;
        for (auto& mu : bn.running_mean) mu += 0.3;
    }
    restore(scratch, snap);
    auto after = forward(scratch, batch, BnMode::RunningStats, CachePolicy::None);
    CHECK(before.logits.values() == after.logits.values());
}

TEST_CASE("restore transfers BN state without touching dense weights") {
    Model a = tiny_model(1);
    Model b = tiny_model(2); // same spec, different dense weights
    Rng rng(8);
    for (auto& bn : a.bn)
        for (auto& g : bn.gamma) g = 0.5 + rng.uniform();
    auto snap = snapshot(a);
    auto dense_before = b.dense;
    restore(b, snap);
    for (std::size_t i = 0; i < b.dense.size(); ++i) {
        CHECK(b.dense[i].weight == dense_before[i].weight);
        CHECK(b.dense[i].bias == dense_before[i].bias);
    }
    for (std::size_t i = 0; i < b.bn.size(); ++i) {
        CHECK(b.bn[i].gamma == a.bn[i].gamma);
        CHECK(b.bn[i].running_mean == a.bn[i].running_mean);
    }
}

TEST_CASE("restore with wrong fingerprint leaves the model unmodified") {
    Model m = tiny_model(1);
    Model other = init_model(make_mlp_spec(4, {6, 4}, 3), 1);
    auto snap = snapshot(other);
    auto bn_before = m.bn;
    CHECK_THROWS_AS(restore(m, snap), std::invalid_argument);
    for (std::size_t i = 0; i < m.bn.size(); ++i) {
        CHECK(m.bn[i].gamma == bn_before[i].gamma);
        CHECK(m.bn[i].running_mean == bn_before[i].running_mean);
        CHECK(m.bn[i].running_var == bn_before[i].running_var);
    }
}

TEST_CASE("snapshot byte size is constant in dense layer width") {
    // same BN content, input width 4 vs 128: serialized snapshots match in
    // byte count while the models differ hugely
    Model narrow = init_model(make_mlp_spec(4, {5, 4}, 3), 1);
    Model wide = init_model(make_mlp_spec(128, {5, 4}, 3), 1);
    wide.bn = narrow.bn; // identical BN values
    auto s_narrow = snapshot_to_json(snapshot(narrow)).dump();
    auto s_wide = snapshot_to_json(snapshot(wide)).dump();
    // fingerprints differ but serialize at fixed width
    CHECK(s_narrow.size() == s_wide.size());
    auto m_narrow = model_to_json(narrow).dump();
    auto m_wide = model_to_json(wide).dump();
    CHECK(m_wide.size() > 2 * m_narrow.size());
}
