#pragma once

#include "folkvae/tensor.hpp"

#include <cstdint>

namespace folkvae::eval {

// Exact (O(N^2)) t-SNE to 2 dimensions with the usual schedule: perplexity
// calibration by per-point binary search, early exaggeration, momentum switch.
// Deterministic for a fixed seed.
Mat tsne_2d(const Mat& X, double perplexity = 30.0, int iterations = 500,
            uint64_t seed = 1);

} // namespace folkvae::eval
