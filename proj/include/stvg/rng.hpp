#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stvg {

// Seeded generator with hand-rolled distributions so that a fixed seed gives
// the same stream regardless of standard-library version. State round-trips
// through a string for checkpointing.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, cosine branch only (no cached second draw).
    double normal(double mu = 0.0, double sigma = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mu + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Inclusive range.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    std::string state() const;
    void set_state(const std::string& s);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1))]);
    }

private:
    std::mt19937_64 eng_;
};

std::vector<double> normal_data(Rng& rng, size_t n, double mu, double sigma);
std::vector<double> xavier_uniform_data(Rng& rng, int fan_in, int fan_out);

}  // namespace stvg
