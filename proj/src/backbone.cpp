#include "sfa/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

#include "sfa/errors.hpp"
#include "sfa/ops.hpp"
#include "sfa/rng.hpp"

namespace sfa {

namespace {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

std::string block_prefix(std::size_t l) { return "blocks." + std::to_string(l) + "."; }

}  // namespace

std::string head_kind_name(HeadKind kind) {
    return kind == HeadKind::segmentation ? "segmentation" : "regression";
}

HeadKind parse_head_kind(const std::string& name) {
    if (name == "segmentation") {
        return HeadKind::segmentation;
    }
    if (name == "regression") {
        return HeadKind::regression;
    }
    throw ConfigError("unknown head kind '" + name + "'");
}

void BackboneConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("backbone config: " + what); };
    if (patch_size == 0 || image_h == 0 || image_w == 0) {
        fail("image size and patch size must be positive");
    }
    if (image_h % patch_size != 0 || image_w % patch_size != 0) {
        fail("image size " + std::to_string(image_h) + "x" + std::to_string(image_w) +
             " is not divisible by patch size " + std::to_string(patch_size));
    }
    if (in_channels == 0) {
        fail("in_channels must be positive");
    }
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
        fail("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of num_heads " +
             std::to_string(num_heads));
    }
    if (num_blocks < 1) {
        fail("num_blocks must be >= 1");
    }
    if (mlp_ratio < 1) {
        fail("mlp_ratio must be >= 1");
    }
    if (head_kind == HeadKind::segmentation && num_classes < 2) {
        fail("segmentation needs at least 2 classes");
    }
}

Tensor patchify(const Tensor& images, std::size_t patch_size) {
    if (images.rank() != 4) {
        throw ShapeError("patchify: expected (batch, H, W, C), got " + shape_to_string(images.shape()));
    }
    const std::size_t batch = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
    if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
        throw ShapeError("patchify: image " + shape_to_string(images.shape()) + " not divisible by patch " +
                         std::to_string(patch_size));
    }
    const std::size_t gh = h / patch_size, gw = w / patch_size, pd = patch_size * patch_size * c;
    Tensor out(Shape{batch, gh * gw, pd});
    float* dst = out.raw();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t ty = 0; ty < gh; ++ty) {
            for (std::size_t tx = 0; tx < gw; ++tx) {
                for (std::size_t py = 0; py < patch_size; ++py) {
                    const float* src = images.raw() + ((b * h + ty * patch_size + py) * w + tx * patch_size) * c;
                    dst = std::copy(src, src + patch_size * c, dst);
                }
            }
        }
    }
    return out;
}

Model Model::build(const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    Rng rng(derive_seed(seed, {0x6261636bULL}));
    const std::size_t d = config.embed_dim, hid = config.hidden_dim(), pd = config.patch_dim();
    auto& s = m.store_;

    s.add("embed.weight", Group::backbone_other, fan_in_uniform({pd, d}, pd, rng));
    s.add("embed.bias", Group::backbone_other, Tensor({d}));
    {
        std::uniform_real_distribution<float> dist(-0.02f, 0.02f);
        Tensor pos({config.tokens(), d});
        for (auto& v : pos.data()) {
            v = dist(rng);
        }
        s.add("pos_embed", Group::backbone_other, std::move(pos));
    }
    for (std::size_t l = 0; l < config.num_blocks; ++l) {
        const auto p = block_prefix(l);
        s.add(p + "norm1.gamma", Group::backbone_other, Tensor({d}, 1.0f));
        s.add(p + "norm1.beta", Group::backbone_other, Tensor({d}));
        for (const char* name : {"wq", "wk", "wv", "wo"}) {
            s.add(p + "att." + name, Group::backbone_att, fan_in_uniform({d, d}, d, rng));
            s.add(p + "att.b" + std::string(name + 1), Group::backbone_att, Tensor({d}));
        }
        s.add(p + "norm2.gamma", Group::backbone_other, Tensor({d}, 1.0f));
        s.add(p + "norm2.beta", Group::backbone_other, Tensor({d}));
        s.add(p + "mlp.w1", Group::backbone_mlp, fan_in_uniform({d, hid}, d, rng));
        s.add(p + "mlp.b1", Group::backbone_mlp, Tensor({hid}));
        s.add(p + "mlp.w2", Group::backbone_mlp, fan_in_uniform({hid, d}, hid, rng));
        s.add(p + "mlp.b2", Group::backbone_mlp, Tensor({d}));
    }
    s.add("final_norm.gamma", Group::backbone_other, Tensor({d}, 1.0f));
    s.add("final_norm.beta", Group::backbone_other, Tensor({d}));
    s.add("head.weight", Group::head, fan_in_uniform({d, config.out_channels()}, d, rng));
    s.add("head.bias", Group::head, Tensor({config.out_channels()}));
    m.resolve_slots();
    return m;
}

Model Model::from_store(const BackboneConfig& config, ParameterStore store, std::optional<AdapterConfig> adapter) {
    config.validate();
    Model reference = build(config, 0);
    if (adapter) {
        attach(reference, *adapter, 0);
    }
    if (reference.store_.size() != store.size()) {
        throw FormatError("model layout: expected " + std::to_string(reference.store_.size()) + " tensors, got " +
                          std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& want = reference.store_.entry(i);
        const auto& got = store.entry(i);
        if (want.name != got.name || want.group != got.group || want.value.shape() != got.value.shape()) {
            throw FormatError("model layout: tensor " + std::to_string(i) + " is '" + got.name + "' " +
                              shape_to_string(got.value.shape()) + ", expected '" + want.name + "' " +
                              shape_to_string(want.value.shape()));
        }
    }
    Model m;
    m.config_ = config;
    m.store_ = std::move(store);
    m.adapter_ = std::move(adapter);
    m.resolve_slots();
    return m;
}

void Model::reset_head(HeadKind kind, std::size_t num_classes, std::uint64_t seed) {
    BackboneConfig next = config_;
    next.head_kind = kind;
    next.num_classes = num_classes;
    next.validate();
    config_ = next;
    Rng rng(derive_seed(seed, {0x68656164ULL}));
    const std::size_t d = config_.embed_dim, k = config_.out_channels();
    store_.entry(head_w_).value = fan_in_uniform({d, k}, d, rng);
    store_.entry(head_b_).value = Tensor({k});
}

void Model::resolve_slots() {
    const auto& s = store_;
    embed_w_ = s.slot_of("embed.weight");
    embed_b_ = s.slot_of("embed.bias");
    pos_ = s.slot_of("pos_embed");
    final_gamma_ = s.slot_of("final_norm.gamma");
    final_beta_ = s.slot_of("final_norm.beta");
    head_w_ = s.slot_of("head.weight");
    head_b_ = s.slot_of("head.bias");
    blocks_.clear();
    adapter_slots_.assign(config_.num_blocks, {});
    block_index_.assign(s.size(), -1);
    for (std::size_t l = 0; l < config_.num_blocks; ++l) {
        const auto p = block_prefix(l);
        auto at = [&](const std::string& n) {
            const auto slot = s.slot_of(p + n);
            block_index_[slot] = static_cast<int>(l);
            return slot;
        };
        blocks_.push_back(BlockSlots{at("norm1.gamma"), at("norm1.beta"), at("att.wq"), at("att.bq"), at("att.wk"),
                                     at("att.bk"), at("att.wv"), at("att.bv"), at("att.wo"), at("att.bo"),
                                     at("norm2.gamma"), at("norm2.beta"), at("mlp.w1"), at("mlp.b1"), at("mlp.w2"),
                                     at("mlp.b2")});
        for (const char* site : {"adapter_att.", "adapter_mlp."}) {
            if (!s.find(p + site + "w_down")) {
                continue;
            }
            const std::string sp = std::string(site);
            AdapterSiteSlots a{at(sp + "w_down"), at(sp + "b_down"), at(sp + "w_up"), at(sp + "b_up")};
            (sp == "adapter_att." ? adapter_slots_[l].att : adapter_slots_[l].mlp) = a;
        }
    }
}

Var<float> Model::forward(Tape<float>& tape, const Tensor& images) const { return run(tape, images, true); }

Tensor Model::predict(const Tensor& images) const {
    Tape<float> tape;
    return run(tape, images, false).value();
}

Var<float> Model::run(Tape<float>& tape, const Tensor& images, bool track) const {
    const auto& c = config_;
    if (images.rank() != 4 || images.dim(1) != c.image_h || images.dim(2) != c.image_w ||
        images.dim(3) != c.in_channels) {
        throw ShapeError("forward: expected images (B, " + std::to_string(c.image_h) + ", " +
                         std::to_string(c.image_w) + ", " + std::to_string(c.in_channels) + "), got " +
                         shape_to_string(images.shape()));
    }
    const std::size_t batch = images.dim(0);
    auto p = [&](std::size_t slot) {
        if (track) {
            return bind(tape, store_, slot);
        }
        return tape.parameter(store_.entry(slot).value, false, -1);
    };
    auto site_vars = [&](const AdapterSiteSlots& a) { return AdapterSiteVars{p(a.w_down), p(a.b_down), p(a.w_up), p(a.b_up)}; };

    auto x = tape.constant(patchify(images, c.patch_size));
    auto h = ops::add(ops::linear(x, p(embed_w_), p(embed_b_)), p(pos_));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const auto& ad = adapter_slots_[l];
        auto a = ops::layer_norm(h, p(b.norm1_gamma), p(b.norm1_beta));
        auto q = ops::linear(a, p(b.wq), p(b.bq));
        auto k = ops::linear(a, p(b.wk), p(b.bk));
        auto v = ops::linear(a, p(b.wv), p(b.bv));
        auto att = ops::linear(ops::scaled_dot_attention(q, k, v, c.num_heads), p(b.wo), p(b.bo));
        auto u = ops::add(h, att);
        if (ad.att) {
            u = adapter_forward(u, site_vars(*ad.att));
        }
        auto m = ops::layer_norm(u, p(b.norm2_gamma), p(b.norm2_beta));
        auto f = ops::linear(ops::gelu(ops::linear(m, p(b.w1), p(b.b1))), p(b.w2), p(b.b2));
        const bool parallel = adapter_ && adapter_->style == AdapterStyle::parallel_scaled;
        if (ad.mlp && parallel) {
            f = ops::add(f, ops::scale(adapter_branch(m, site_vars(*ad.mlp)), adapter_->scale));
        }
        h = ops::add(u, f);
        if (ad.mlp && !parallel) {
            h = adapter_forward(h, site_vars(*ad.mlp));
        }
    }
    h = ops::layer_norm(h, p(final_gamma_), p(final_beta_));
    auto logits = ops::linear(h, p(head_w_), p(head_b_));
    logits = ops::reshape(logits, Shape{batch, c.grid_h(), c.grid_w(), c.out_channels()});
    return ops::upsample_nearest(logits, c.patch_size);
}

}  // namespace sfa
