#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace gvs {

// Deterministic RNG wrapper. std::mt19937_64 itself is bit-exact by the
// standard; the distributions here are hand-rolled because the standard
// library distributions are implementation-defined. All stochastic behavior
// in the project flows through this class so that identical (seed, config)
// runs are reproducible byte for byte.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Derives an independent stream, e.g. one per sample or per repeat.
    // splitmix64 scrambles (seed, stream) into a fresh engine seed.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z = z ^ (z >> 31);
        return Rng(z);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    // Standard normal via Box-Muller; one value per call, cached pair.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates with our own uniform_int; std::shuffle is not portable.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Engine state round-trips through text so checkpoints can resume the
    // exact stream. The Box-Muller cache is serialized alongside.
    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << ' ' << (has_cached_ ? 1 : 0);
        if (has_cached_) {
            os.precision(17);
            os << ' ' << cached_;
        }
        return os.str();
    }

    static Rng deserialize(const std::string& text) {
        Rng r(0);
        std::istringstream is(text);
        is >> r.engine_;
        int flag = 0;
        is >> flag;
        r.has_cached_ = flag != 0;
        if (r.has_cached_) is >> r.cached_;
        return r;
    }

private:
    std::mt19937_64 engine_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace gvs
