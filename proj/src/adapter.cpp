#include "sfa/adapter.hpp"

#include <cmath>
#include <random>
#include <string>

#include "sfa/backbone.hpp"
#include "sfa/errors.hpp"
#include "sfa/ops.hpp"
#include "sfa/rng.hpp"

namespace sfa {

std::string adapter_style_name(AdapterStyle style) {
    return style == AdapterStyle::sequential_residual ? "sequential_residual" : "parallel_scaled";
}

AdapterStyle parse_adapter_style(const std::string& name) {
    if (name == "sequential_residual" || name == "sequential") {
        return AdapterStyle::sequential_residual;
    }
    if (name == "parallel_scaled" || name == "parallel" || name == "adaptformer") {
        return AdapterStyle::parallel_scaled;
    }
    throw ConfigError("unknown adapter style '" + name + "'");
}

AdapterSites AdapterConfig::sites_for(std::size_t block) const {
    if (!sites.empty()) {
        return sites.at(block);
    }
    if (style == AdapterStyle::parallel_scaled) {
        return AdapterSites{false, true};
    }
    return AdapterSites{true, true};
}

std::size_t AdapterConfig::site_count(std::size_t num_blocks) const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < num_blocks; ++l) {
        const auto s = sites_for(l);
        n += static_cast<std::size_t>(s.after_att) + static_cast<std::size_t>(s.after_mlp);
    }
    return n;
}

void AdapterConfig::validate(std::size_t num_blocks) const {
    if (middle_dim < 1) {
        throw ConfigError("adapter middle_dim must be >= 1");
    }
    if (!sites.empty() && sites.size() != num_blocks) {
        throw ConfigError("adapter sites list has " + std::to_string(sites.size()) + " entries for " +
                          std::to_string(num_blocks) + " blocks");
    }
    if (style == AdapterStyle::parallel_scaled) {
        for (std::size_t l = 0; l < num_blocks; ++l) {
            if (sites_for(l).after_att) {
                throw ConfigError("parallel_scaled adapters attach beside the MLP only");
            }
        }
    }
}

std::size_t solve_dimension(std::size_t budget, std::size_t embed_dim, std::size_t num_sites) {
    if (num_sites == 0) {
        throw ConfigError("solve_dimension: no adapter sites enabled");
    }
    const std::size_t minimum = adapter_param_count(embed_dim, 1, num_sites);
    if (budget < minimum) {
        throw ConfigError("external adapter budget " + std::to_string(budget) +
                          " is too small for middle_dim = 1; minimum feasible budget is " + std::to_string(minimum));
    }
    // budget >= sites * ((2D + 1) d + D)  =>  d = floor((budget / sites - D) / (2D + 1))
    const std::size_t per_site = budget / num_sites;
    return (per_site - embed_dim) / (2 * embed_dim + 1);
}

Var<float> adapter_branch(Var<float> x, const AdapterSiteVars& site) {
    const auto& wd = site.w_down.value();
    if (wd.rank() != 2 || x.value().cols() != wd.dim(0)) {
        throw ShapeError("adapter: input " + shape_to_string(x.shape()) + " does not match W_down " +
                         shape_to_string(wd.shape()));
    }
    auto down = ops::relu(ops::linear(x, site.w_down, site.b_down));
    return ops::linear(down, site.w_up, site.b_up);
}

Var<float> adapter_forward(Var<float> x, const AdapterSiteVars& site) { return ops::add(x, adapter_branch(x, site)); }

Tensor adapter_forward(const Tensor& x, const AdapterSiteWeights& site) {
    Tape<float> tape;
    auto v = tape.constant(x);
    AdapterSiteVars vars{tape.constant(site.w_down), tape.constant(site.b_down), tape.constant(site.w_up),
                         tape.constant(site.b_up)};
    return adapter_forward(v, vars).value();
}

void attach(Model& model, const AdapterConfig& config, std::uint64_t seed) {
    if (model.adapter_) {
        throw ConfigError("attach: adapters are already attached to this model");
    }
    const auto& bc = model.config();
    config.validate(bc.num_blocks);
    const std::size_t d = bc.embed_dim, mid = config.middle_dim;
    Rng rng(derive_seed(seed, {0x61646170ULL}));
    const float bound = 1.0f / std::sqrt(static_cast<float>(d));
    std::uniform_real_distribution<float> dist(-bound, bound);
    auto& s = model.params();
    for (std::size_t l = 0; l < bc.num_blocks; ++l) {
        const auto sites = config.sites_for(l);
        for (const auto& [enabled, site] : {std::pair{sites.after_att, "adapter_att."}, std::pair{sites.after_mlp, "adapter_mlp."}}) {
            if (!enabled) {
                continue;
            }
            const std::string p = "blocks." + std::to_string(l) + "." + site;
            Tensor w_down({d, mid});
            for (auto& v : w_down.data()) {
                v = dist(rng);
            }
            s.add(p + "w_down", Group::adapter, std::move(w_down));
            s.add(p + "b_down", Group::adapter, Tensor({mid}));
            s.add(p + "w_up", Group::adapter, Tensor({mid, d}));
            s.add(p + "b_up", Group::adapter, Tensor({d}));
        }
    }
    model.adapter_ = config;
    model.resolve_slots();
}

}  // namespace sfa
