#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/gradcheck.hpp"

namespace mmfuse {

struct SuiteEntry {
    std::string name;
    double max_rel_err = 0.0;
    double threshold = 0.0;
    std::size_t instances = 0;

    bool passed() const { return max_rel_err <= threshold; }
};

// Finite-difference verification of every registered primitive (threshold
// 1e-6) and of the composite losses including the full model on a small
// 4-document batch (threshold 1e-4), at `instances` seeded random points each.
std::vector<SuiteEntry> run_gradcheck_suite(std::uint64_t seed = 1,
                                            std::size_t instances = 10);

} // namespace mmfuse
