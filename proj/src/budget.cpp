#include "sfa/budget.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sfa/errors.hpp"

namespace sfa {

BudgetPlan BudgetPlan::make(double beta, double rho, std::size_t total_params) {
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw ConfigError("budget beta must lie in [0, 1], got " + std::to_string(beta));
    }
    if (!(rho >= 0.0 && rho <= 1.0)) {
        throw ConfigError("budget rho must lie in [0, 1], got " + std::to_string(rho));
    }
    BudgetPlan p;
    p.beta = beta;
    p.rho = rho;
    p.beta_e = rho * beta;
    p.beta_i = beta - p.beta_e;
    p.total_params = total_params;
    const auto n = static_cast<double>(total_params);
    p.total_quota = static_cast<std::size_t>(std::floor(beta * n));
    p.external_quota = std::min(static_cast<std::size_t>(std::floor(p.beta_e * n)), p.total_quota);
    p.internal_quota =
        std::min(static_cast<std::size_t>(std::floor(p.beta_i * n)), p.total_quota - p.external_quota);
    return p;
}

}  // namespace sfa
