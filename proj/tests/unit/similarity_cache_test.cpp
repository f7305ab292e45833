#include <doctest.h>

#include <random>

#include "kvsim/rng.hpp"
#include "kvsim/similarity_cache.hpp"

using namespace kvsim;

namespace {

std::vector<double> unit_x(int d) {
    std::vector<double> v(d, 0.0);
    v[0] = 1.0;
    return v;
}

std::vector<QueryLabel> labels_from(const std::vector<std::vector<double>>& queries) {
    std::vector<QueryLabel> labels(queries.size());
    for (size_t i = 0; i < queries.size(); ++i) labels[i] = {queries[i], true};
    return labels;
}

Matrix rows_at(const Matrix& host, const std::vector<int>& indices) {
    Matrix out(0, host.cols);
    for (int i : indices) out.append_row(host.row_span(i));
    return out;
}

}  // namespace

TEST_CASE("aggregation keeps the common value for equal similarities") {
    std::mt19937_64 gen(mix_seed(11, 1));
    std::uniform_real_distribution<double> wdist(0.001, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 1 + static_cast<int>(gen() % 8);
        std::vector<double> sims(m, 0.9);
        std::vector<double> weights(m);
        for (double& w : weights) w = wdist(gen);
        CHECK(aggregate_similarity(sims, weights) == doctest::Approx(0.9).epsilon(1e-12));
    }
}

TEST_CASE("aggregation hand-evaluated examples") {
    std::vector<double> sims{0.5, 1.0};
    std::vector<double> equal{1.0, 1.0};
    CHECK(aggregate_similarity(sims, equal) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // A heavily weighted low-similarity head dominates the aggregate.
    std::vector<double> skewed{0.9, 0.1};
    CHECK(aggregate_similarity(sims, skewed) ==
          doctest::Approx(1.0 / 1.9).epsilon(1e-12));
}

TEST_CASE("aggregation is monotone in each similarity") {
    std::vector<double> weights{0.5, 1.5, 1.0};
    for (int pos = 0; pos < 3; ++pos) {
        double prev = -1.0;
        for (int step = 1; step <= 20; ++step) {
            std::vector<double> sims{0.6, 0.9, 0.7};
            sims[pos] = step / 20.0;
            double agg = aggregate_similarity(sims, weights);
            CHECK(agg >= prev);
            prev = agg;
        }
    }
}

TEST_CASE("aggregation falls back to uniform weights when all weights are zero") {
    std::vector<double> sims{0.5, 1.0};
    std::vector<double> zero{0.0, 0.0};
    CHECK(aggregate_similarity(sims, zero) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("aggregation input validation") {
    std::vector<double> sims{0.5, 1.0};
    std::vector<double> short_w{1.0};
    CHECK_THROWS_AS(aggregate_similarity(sims, short_w), ShapeError);
    std::vector<double> neg_w{1.0, -0.5};
    CHECK_THROWS_AS(aggregate_similarity(sims, neg_w), ArgumentError);
    std::vector<double> nonpos{0.5, 0.0};
    std::vector<double> w{1.0, 1.0};
    CHECK_THROWS_AS(aggregate_similarity(nonpos, w), ArgumentError);
}

TEST_CASE("lookup misses on invalid labels and updates them in the same call") {
    std::vector<std::vector<double>> queries{unit_x(4), unit_x(4)};
    std::vector<QueryLabel> labels(2);
    std::vector<double> weights{1.0, 1.0};

    LookupResult first = lookup(labels, queries, weights, 0.5);
    CHECK_FALSE(first.hit);
    CHECK(first.reason == MissReason::kInvalidLabel);
    CHECK(labels[0].valid);

    // The fused update installed the probing queries, so a repeat hits at 1.0.
    LookupResult second = lookup(labels, queries, weights, 0.5);
    CHECK(second.hit);
    CHECK(second.aggregated == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lookup forces a miss on non-positive similarity") {
    std::vector<std::vector<double>> queries{unit_x(4), unit_x(4)};
    std::vector<QueryLabel> labels = labels_from(queries);
    std::vector<double> flipped(unit_x(4));
    flipped[0] = -1.0;
    labels[1].q = flipped;
    std::vector<double> weights{1.0, 1.0};

    LookupResult res = lookup(labels, queries, weights, -1.0);
    CHECK_FALSE(res.hit);
    CHECK(res.reason == MissReason::kNonPositiveSimilarity);
    // Labels were refreshed by the miss.
    CHECK(labels[1].q == unit_x(4));
}

TEST_CASE("lookup reports below-threshold misses") {
    std::vector<std::vector<double>> queries{unit_x(4)};
    std::vector<QueryLabel> labels = labels_from(queries);
    std::vector<double> probe{0.9, 0.1, 0.0, 0.0};
    std::vector<std::vector<double>> probes{probe};
    std::vector<double> weights{1.0};

    LookupResult res = lookup(labels, probes, weights, 0.9999);
    CHECK_FALSE(res.hit);
    CHECK(res.reason == MissReason::kBelowThreshold);
    CHECK(res.aggregated < 0.9999);
    CHECK(res.aggregated > 0.9);
}

TEST_CASE("hit decision is invariant under positive query scaling") {
    std::vector<std::vector<double>> queries{{0.3, 0.7, -0.2, 0.1}, {1.0, 0.2, 0.0, -0.4}};
    std::vector<QueryLabel> labels = labels_from(queries);
    std::vector<double> weights{0.8, 0.4};

    std::vector<std::vector<double>> scaled = queries;
    for (auto& q : scaled)
        for (double& x : q) x *= 3.7;

    LookupResult plain = lookup(labels, queries, weights, 0.9);
    std::vector<QueryLabel> labels2 = labels_from(queries);
    LookupResult magnified = lookup(labels2, scaled, weights, 0.9);
    CHECK(plain.hit == magnified.hit);
    CHECK(plain.aggregated == doctest::Approx(magnified.aggregated).epsilon(1e-12));
}

TEST_CASE("update after a hit violates the protocol") {
    CacheEntry entry;
    entry.last_lookup_hit = false;
    Matrix k(1, 2), v(1, 2);
    update_entry(entry, {3}, k, v, 1);
    CHECK(entry.last_update_step == 1);

    entry.last_lookup_hit = true;
    CHECK_THROWS_AS(update_entry(entry, {4}, k, v, 2), ContractError);
}

TEST_CASE("update replaces the whole entry") {
    CacheEntry entry;
    Matrix k1(2, 2), v1(2, 2);
    k1.at(0, 0) = 1.0;
    update_entry(entry, {1, 5}, k1, v1, 3);

    Matrix k2(1, 2), v2(1, 2);
    k2.at(0, 0) = 9.0;
    update_entry(entry, {2}, k2, v2, 4);
    CHECK(entry.indices == std::vector<int>{2});
    CHECK(entry.k_rows.rows == 1);
    CHECK(entry.k_rows.at(0, 0) == 9.0);
    CHECK(entry.last_update_step == 4);
}

TEST_CASE("update input validation") {
    CacheEntry entry;
    Matrix k(2, 2), v(2, 2);
    std::vector<int> unsorted{5, 1};
    CHECK_THROWS_AS(update_entry(entry, unsorted, k, v, 1), ArgumentError);
    CHECK_THROWS_AS(update_entry(entry, {}, k, v, 1), ArgumentError);
    Matrix short_k(1, 2);
    CHECK_THROWS_AS(update_entry(entry, {1, 2}, short_k, v, 1), ShapeError);
}

TEST_CASE("entry contents track the most recent miss against the host rows") {
    std::mt19937_64 gen(mix_seed(11, 2));
    Matrix host_k(64, 4), host_v(64, 4);
    fill_normal(gen, std::span<double>(host_k.data));
    fill_normal(gen, std::span<double>(host_v.data));

    CacheEntry entry;
    std::vector<int> last_indices;
    int last_step = -1;
    for (int step = 0; step < 200; ++step) {
        const bool miss = (gen() % 3) != 0;
        entry.last_lookup_hit = !miss;
        if (miss) {
            std::vector<int> indices;
            for (int i = 0; i < 64; ++i)
                if (gen() % 8 == 0) indices.push_back(i);
            if (indices.empty()) indices.push_back(static_cast<int>(gen() % 64));
            update_entry(entry, indices, rows_at(host_k, indices), rows_at(host_v, indices),
                         step);
            last_indices = indices;
            last_step = step;
        }
        if (last_step < 0) continue;
        CHECK(entry.indices == last_indices);
        CHECK(entry.last_update_step == last_step);
        for (size_t i = 0; i < last_indices.size(); ++i)
            for (int c = 0; c < 4; ++c)
                CHECK(entry.k_rows.at(static_cast<int>(i), c) == host_k.at(last_indices[i], c));
    }
}

TEST_CASE("sink recent buffer window arithmetic") {
    Matrix k(100, 8), v(100, 8);
    for (int t = 0; t < 100; ++t)
        for (int c = 0; c < 8; ++c) k.at(t, c) = t + 0.125 * c;
    SinkRecentBuffer buf(4, 64, 8);
    buf.reset_from(k, v);

    CHECK(buf.tokens_seen() == 100);
    CHECK(buf.held_tokens() == 68);
    std::vector<int> idx = buf.token_indices();
    REQUIRE(idx.size() == 68);
    for (int i = 0; i < 4; ++i) CHECK(idx[i] == i);
    for (int i = 0; i < 64; ++i) CHECK(idx[4 + i] == 36 + i);

    CHECK(buf.holds(0));
    CHECK(buf.holds(36));
    CHECK_FALSE(buf.holds(35));
    CHECK_FALSE(buf.holds(100));

    CHECK(buf.k_row_of(50)[0] == doctest::Approx(50.0));
    CHECK(buf.k_row_of(2)[3] == doctest::Approx(2.0 + 0.375));
    CHECK_THROWS_AS(buf.k_row_of(10), IndexError);
}

TEST_CASE("sink rows survive any number of advances") {
    Matrix k(4, 2), v(4, 2);
    for (int t = 0; t < 4; ++t) k.at(t, 0) = 100.0 + t;
    SinkRecentBuffer buf(4, 8, 2);
    buf.reset_from(k, v);

    std::vector<double> row{0.0, 0.0};
    for (int t = 4; t < 1000; ++t) {
        row[0] = static_cast<double>(t);
        buf.advance(row, row);
    }
    for (int t = 0; t < 4; ++t) CHECK(buf.k_row_of(t)[0] == 100.0 + t);
    // The ring now holds exactly the last 8 tokens.
    for (int t = 992; t < 1000; ++t) CHECK(buf.k_row_of(t)[0] == static_cast<double>(t));
    CHECK_FALSE(buf.holds(991));
}

TEST_CASE("short sequences are held entirely") {
    Matrix k(10, 2), v(10, 2);
    SinkRecentBuffer buf(4, 64, 2);
    buf.reset_from(k, v);
    CHECK(buf.held_tokens() == 10);
    for (int t = 0; t < 10; ++t) CHECK(buf.holds(t));
}

TEST_CASE("cache byte accounting") {
    // One offloaded head with k=1000 rows of d=128 FP16: the KV term alone.
    CHECK(cache_bytes(1, 1000, 0, 0, 0, 128, 2) == 512000);

    // Doubling offloaded heads doubles the per-head terms; labels are global.
    const uint64_t one = cache_bytes(1, 100, 68, 4, 8, 64, 2);
    const uint64_t two = cache_bytes(2, 100, 68, 4, 8, 64, 2);
    const uint64_t labels = cache_bytes(0, 100, 68, 4, 8, 64, 2);
    CHECK(labels == 4ULL * 8 * 64 * 2);
    CHECK(two - one == one - labels);

    CHECK_THROWS_AS(cache_bytes(-1, 1, 0, 1, 1, 8, 2), ArgumentError);
}

TEST_CASE("group top-k merge ranks the union by best score") {
    std::vector<std::vector<ScoredIndex>> proposals{
        {{4, 9.0}, {1, 5.0}, {7, 2.0}},
        {{1, 8.0}, {2, 6.0}, {9, 1.0}},
    };
    // Union scores: 4:9, 1:max(5,8)=8, 2:6, 7:2, 9:1.
    CHECK(merge_group_topk(proposals, 3) == std::vector<int>{1, 2, 4});
    CHECK(merge_group_topk(proposals, 5) == std::vector<int>{1, 2, 4, 7, 9});
}

TEST_CASE("group top-k merge breaks score ties toward the lower index") {
    std::vector<std::vector<ScoredIndex>> proposals{
        {{8, 3.0}, {2, 3.0}},
        {{5, 3.0}},
    };
    CHECK(merge_group_topk(proposals, 2) == std::vector<int>{2, 5});
}

TEST_CASE("group top-k merge validation") {
    std::vector<std::vector<ScoredIndex>> proposals{{{1, 2.0}}};
    CHECK_THROWS_AS(merge_group_topk(proposals, 0), ArgumentError);
    CHECK_THROWS_AS(merge_group_topk(proposals, 2), ArgumentError);
    std::vector<std::vector<ScoredIndex>> empty;
    CHECK_THROWS_AS(merge_group_topk(empty, 1), ArgumentError);
}
