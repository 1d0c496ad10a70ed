#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "modarith/rng.hpp"

namespace modarith {

struct TaskSpec {
    int modulus = 59;
    double train_fraction = 0.9;
    std::uint64_t seed = 0;

    void validate() const {
        if (modulus < 3) throw std::invalid_argument("modulus must be at least 3");
        if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw std::invalid_argument("train fraction must lie in (0, 1]");
    }
};

// Pairs are addressed by their grid row a*n + b.
struct Dataset {
    int modulus = 0;
    std::vector<int> train;
    std::vector<int> test;

    std::size_t pair_count() const { return static_cast<std::size_t>(modulus) * static_cast<std::size_t>(modulus); }
    int left(int pair) const { return pair / modulus; }
    int right(int pair) const { return pair % modulus; }
    int label(int pair) const { return (left(pair) + right(pair)) % modulus; }
};

inline std::size_t grid_row(int a, int b, int n) { return static_cast<std::size_t>(a) * static_cast<std::size_t>(n) + static_cast<std::size_t>(b); }

// Train size is fraction * n^2 rounded to the nearest integer (3133 of 3481 for
// n = 59 at 0.9); the split is a seeded shuffle of the grid.
inline Dataset generate_dataset(const TaskSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.modulus = spec.modulus;
    const std::size_t total = ds.pair_count();
    std::vector<int> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = static_cast<int>(i);
    Rng rng(spec.seed, "split");
    rng.shuffle(order);
    const auto train_size = std::min(total, static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(total))));
    ds.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_size));
    ds.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train_size), order.end());
    return ds;
}

}  // namespace modarith
