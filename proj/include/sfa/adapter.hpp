#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfa/autograd.hpp"
#include "sfa/tensor.hpp"

namespace sfa {

class Model;

enum class AdapterStyle { sequential_residual, parallel_scaled };

std::string adapter_style_name(AdapterStyle style);
AdapterStyle parse_adapter_style(const std::string& name);

struct AdapterSites {
    bool after_att = true;
    bool after_mlp = true;
    bool operator==(const AdapterSites&) const = default;
};

/// External bottleneck adapter settings.
///
/// sequential_residual wraps the residual stream after the attention and/or
/// MLP sub-layer: y = x + up(relu(down(x))). parallel_scaled is the side-path
/// baseline: scale * up(relu(down(ln2(u)))) is added to the MLP branch output,
/// so it only ever occupies the after_mlp site.
struct AdapterConfig {
    std::size_t middle_dim = 8;
    AdapterStyle style = AdapterStyle::sequential_residual;
    double scale = 0.1;
    /// One entry per block; empty means every block uses the style's default sites.
    std::vector<AdapterSites> sites;

    AdapterSites sites_for(std::size_t block) const;
    std::size_t site_count(std::size_t num_blocks) const;
    void validate(std::size_t num_blocks) const;
    bool operator==(const AdapterConfig&) const = default;
};

/// Parameters of one adapter: W_down (D x d), b_down (d), W_up (d x D), b_up (D).
inline std::size_t adapter_site_params(std::size_t embed_dim, std::size_t middle_dim) {
    return 2 * embed_dim * middle_dim + middle_dim + embed_dim;
}

inline std::size_t adapter_param_count(std::size_t embed_dim, std::size_t middle_dim, std::size_t num_sites) {
    return num_sites * adapter_site_params(embed_dim, middle_dim);
}

/// Largest d >= 1 whose adapters fit in `budget` scalars. Throws ConfigError
/// (naming the minimum feasible budget) when even d = 1 does not fit.
std::size_t solve_dimension(std::size_t budget, std::size_t embed_dim, std::size_t num_sites);

struct AdapterSiteVars {
    Var<float> w_down, b_down, w_up, b_up;
};

/// x + up(relu(down(x)))
Var<float> adapter_forward(Var<float> x, const AdapterSiteVars& site);

/// Branch only: up(relu(down(x))) without the residual.
Var<float> adapter_branch(Var<float> x, const AdapterSiteVars& site);

struct AdapterSiteWeights {
    Tensor w_down, b_down, w_up, b_up;
};

/// Eager evaluation of the sequential residual adapter on plain tensors.
Tensor adapter_forward(const Tensor& x, const AdapterSiteWeights& site);

/// Registers zero-up-projection adapters in the model's store under group
/// `adapter`. Throws if adapters are already attached.
void attach(Model& model, const AdapterConfig& config, std::uint64_t seed);

}  // namespace sfa
