#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace stcn {

// splitmix64 generator. One self-contained PRNG is used everywhere so a run
// is reproducible from a single root seed, independent of the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();

    // uniform in [0, 1)
    double uniform();
    double uniform(double lo, double hi);

    // uniform integer in [0, n); n must be > 0
    std::uint64_t below(std::uint64_t n);

    // standard normal via Box-Muller
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Child streams are decoupled from the root seed and from each other by
// hashing a textual tag: derive_seed(root, "dropout/3") etc.
std::uint64_t derive_seed(std::uint64_t root, const std::string& tag);

} // namespace stcn
