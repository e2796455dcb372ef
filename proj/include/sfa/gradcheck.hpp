#pragma once

// Central-difference gradient checks for the op set, run in double precision.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sfa {

struct GradCheckResult {
    std::string op;
    std::size_t draws = 0;
    std::size_t scalars_checked = 0;
    /// max |analytic - numeric| / max(|analytic|, |numeric|, 1)
    double max_error = 0.0;
};

inline constexpr double kGradCheckStep = 1e-3;
inline constexpr double kGradCheckTolerance = 1e-4;

std::vector<std::string> gradcheck_ops();
GradCheckResult gradcheck(const std::string& op, std::size_t draws, std::uint64_t seed);
std::vector<GradCheckResult> gradcheck_all(std::size_t draws, std::uint64_t seed);

}  // namespace sfa
