#pragma once

#include <string>
#include <vector>

#include "lmbis/gradcheck.hpp"

namespace lmbis {

struct SelfCheckItem {
    std::string name;
    double max_err = 0.0;
    double threshold = 1e-4;
    int seeds = 0;

    bool pass() const { return max_err < threshold; }
};

struct SelfCheckOptions {
    int kernel_seeds = 20;
    int end_to_end_seeds = 20;
};

// Finite-difference verification of every differentiable kernel (threshold
// 1e-4) and of the full tiny network through dice loss (threshold 1e-3).
// Deterministic: seed s produces the same shapes and data every run.
std::vector<SelfCheckItem> run_self_check(const SelfCheckOptions& options = {});

}  // namespace lmbis
