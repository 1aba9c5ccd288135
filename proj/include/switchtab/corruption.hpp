#pragma once

// Feature corruption and paired mini-batch sampling.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "switchtab/error.hpp"
#include "switchtab/preprocess.hpp"
#include "switchtab/rng.hpp"

namespace switchtab {

struct CorruptionResult {
    std::size_t n = 0;
    std::size_t M = 0;
    std::vector<double> values;                   // corrupted copies, row-major
    std::vector<std::vector<std::size_t>> mask;   // per row: the t corrupted columns, ascending
    std::size_t t = 0;
};

// Replaces t = floor(ratio * M) features per row with draws from the column's
// training pool. The draw is uniform over the pool excluding the entry's
// current value, so a corrupted position always changes when the pool offers
// an alternative; a single-value pool keeps that value.
inline CorruptionResult corrupt(const FeatureMatrix& source,
                                std::span<const std::size_t> rows, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw DataError("corruption ratio must lie in [0, 1]");
    if (source.pools.size() != source.M)
        throw DataError("feature matrix carries no corruption pools");

    CorruptionResult result;
    result.n = rows.size();
    result.M = source.M;
    result.t = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(source.M)));
    result.values.resize(result.n * result.M);
    result.mask.resize(result.n);

    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t src = rows[i];
        for (std::size_t c = 0; c < source.M; ++c)
            result.values[i * source.M + c] = source.at(src, c);
        if (result.t == 0) continue;

        std::vector<std::size_t> picked = rng.choose(source.M, result.t);
        std::sort(picked.begin(), picked.end());
        for (std::size_t c : picked) {
            const std::vector<double>& pool = source.pools[c];
            double& cell = result.values[i * source.M + c];
            if (pool.size() == 1) {
                cell = pool[0];
                continue;
            }
            const auto hit = std::lower_bound(pool.begin(), pool.end(), cell);
            if (hit != pool.end() && *hit == cell) {
                const std::size_t skip = static_cast<std::size_t>(hit - pool.begin());
                std::size_t j = static_cast<std::size_t>(rng.below(pool.size() - 1));
                if (j >= skip) ++j;
                cell = pool[j];
            } else {
                cell = pool[static_cast<std::size_t>(rng.below(pool.size()))];
            }
        }
        result.mask[i] = std::move(picked);
    }
    return result;
}

struct BatchPair {
    std::vector<std::size_t> first;
    std::vector<std::size_t> second;
};

// Two independent permutations of [0, n), chunked into batches of B and
// paired index-by-index. The final partial batch is kept; if the streams'
// final batches ever differ in length, both are cut to the shorter one.
inline std::vector<BatchPair> sample_batch_pairs(std::size_t n, std::size_t batch_size,
                                                 Rng& rng) {
    if (n < 2) throw DataError("paired sampling needs at least two rows");
    if (batch_size == 0) throw DataError("batch size must be positive");
    const std::vector<std::size_t> p1 = rng.permutation(n);
    const std::vector<std::size_t> p2 = rng.permutation(n);
    std::vector<BatchPair> pairs;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t stop = std::min(n, start + batch_size);
        BatchPair pair;
        pair.first.assign(p1.begin() + start, p1.begin() + stop);
        pair.second.assign(p2.begin() + start, p2.begin() + stop);
        const std::size_t keep = std::min(pair.first.size(), pair.second.size());
        pair.first.resize(keep);
        pair.second.resize(keep);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

}  // namespace switchtab
