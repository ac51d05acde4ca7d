#pragma once

#include <cstdint>
#include <vector>

namespace sri::rng {

// Counter-style generator built on the splitmix64 finalizer. Every consumer
// in the toolkit derives an independent stream from (seed, tag, indices...)
// instead of sharing one sequential generator. That buys two things we rely
// on: per-unit draws are identical no matter how work is ordered or threaded,
// and output is bit-reproducible across platforms (std::normal_distribution
// and friends are implementation-defined, so they are avoided throughout).

std::uint64_t mix64(std::uint64_t z);

// Tags namespace the derivation paths. Values are arbitrary but frozen:
// changing one silently changes every downstream dataset and estimate.
enum Tag : std::uint64_t {
    kTagAlpha = 0x01,    // DGP coefficient vector
    kTagUnit = 0x02,     // per-unit generation draws (T, epsilon, strata)
    kTagCorrupt = 0x03,  // coder label flips
    kTagPred = 0x04,     // synthetic machine predictions
    kTagSample = 0x05,   // annotation sampling mask
    kTagFolds = 0x06,    // cross-fitting fold assignment
    kTagSplit = 0x07,    // within-fold half splits
    kTagNet = 0x08,      // network init and batch order
    kTagVal = 0x09,      // validation split
    kTagPerm = 0x0a,     // permutation test replicates
    kTagOracle = 0x0b,   // oracle Monte Carlo draws
    kTagCell = 0x0c,     // simulation grid cell / replication seeds
};

class Stream {
public:
    explicit Stream(std::uint64_t state) : state_(state) {}

    std::uint64_t next_u64();

    // Uniform on [0, 1): 53 random mantissa bits.
    double next_unit();

    // Uniform on the open interval (0, 1); safe to feed into logs and the
    // normal inverse CDF.
    double next_open();

    // Standard normal via Wichura's AS 241 inverse CDF (double precision).
    double next_normal();

    // Unbiased integer in [0, bound) by rejection.
    std::uint64_t next_below(std::uint64_t bound);

    // In-place Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Derive a stream from a seed and a path of tag words. Combination is
// hash-chained so (seed, a, b) and (seed, b, a) land in unrelated states.
Stream substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

// Inverse standard normal CDF (AS 241, PPND16). Exposed for reuse by the
// oracle cross-checks.
double inverse_normal_cdf(double p);

}  // namespace sri::rng
