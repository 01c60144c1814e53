#pragma once

#include <stdexcept>
#include <string>

namespace riskcal {

// Precondition / invariant violations (bad arguments, dimension mismatches).
class contract_error : public std::invalid_argument {
public:
    explicit contract_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// A (sample, subgroup) pair with no member voxels; callers skip the sample.
class empty_subgroup_error : public contract_error {
public:
    explicit empty_subgroup_error(const std::string& msg) : contract_error(msg) {}
};

// The Hoeffding penalty alone already exceeds the risk level: no interval
// scaling can ever satisfy the bound with this calibration set size.
class irreducible_penalty_error : public std::runtime_error {
public:
    irreducible_penalty_error(const std::string& msg, long long min_n)
        : std::runtime_error(msg), min_n_required(min_n) {}
    long long min_n_required;
};

// Training diverged (NaN in the loss).
class training_error : public std::runtime_error {
public:
    explicit training_error(const std::string& msg) : std::runtime_error(msg) {}
};

class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace riskcal
