#include "sfa/delta.hpp"

#include <cstring>
#include <stdexcept>

#include "codec.hpp"
#include "sfa/checkpoint.hpp"
#include "sfa/errors.hpp"
#include "sfa/io.hpp"

namespace sfa {

namespace {

/// Backbone configs must agree on everything except the head.
bool same_backbone(BackboneConfig a, BackboneConfig b) {
    a.head_kind = b.head_kind;
    a.num_classes = b.num_classes;
    return a == b;
}

template <class T>
void append_vec(std::vector<std::uint8_t>& body, const std::vector<T>& v) {
    io::append(body, std::span<const T>(v));
}

template <class T>
std::vector<T> read_array(std::span<const std::uint8_t> body, std::size_t offset, std::size_t count,
                          const std::string& what) {
    if (offset + count * sizeof(T) > body.size()) {
        throw FormatError("delta: body truncated inside " + what);
    }
    return io::decode<T>(body.subspan(offset, count * sizeof(T)));
}

}  // namespace

std::vector<std::uint8_t> export_delta(const Model& adapted, const SelectionMask& mask, const Model& base) {
    if (!same_backbone(adapted.config(), base.config())) {
        throw std::invalid_argument("export_delta: adapted model and base have different backbone configs");
    }
    const auto& as = adapted.params();
    const auto& bs = base.params();
    for (const auto& tm : mask.tensors()) {
        const auto slot = as.find(tm.name);
        if (!slot || !is_backbone(as.entry(*slot).group)) {
            throw std::invalid_argument("export_delta: mask names unknown backbone tensor '" + tm.name + "'");
        }
        if (!tm.indices.empty() && tm.indices.back() >= as.entry(*slot).value.size()) {
            throw std::invalid_argument("export_delta: mask index outside '" + tm.name + "'");
        }
    }
    // Everything outside the mask must be untouched, or the delta would lie.
    for (const auto& be : bs) {
        if (!is_backbone(be.group)) {
            continue;
        }
        const auto slot = as.find(be.name);
        if (!slot || as.entry(*slot).value.shape() != be.value.shape()) {
            throw std::invalid_argument("export_delta: tensor '" + be.name + "' missing or reshaped in adapted model");
        }
        const Tensor& av = as.entry(*slot).value;
        const TensorMask* tm = mask.find(be.name);
        std::size_t k = 0;
        for (std::size_t i = 0; i < av.size(); ++i) {
            if (tm && k < tm->indices.size() && tm->indices[k] == i) {
                ++k;
                continue;
            }
            if (std::memcmp(&av[i], &be.value[i], sizeof(float)) != 0) {
                throw std::invalid_argument("export_delta: '" + be.name + "'[" + std::to_string(i) +
                                            "] changed but is not in the mask");
            }
        }
    }

    std::vector<std::uint8_t> body;
    codec::Json mask_records = codec::Json::array();
    for (const auto& tm : mask.tensors()) {
        const Tensor& av = as.value(tm.name);
        std::vector<float> values(tm.indices.size());
        for (std::size_t k = 0; k < values.size(); ++k) {
            values[k] = av[tm.indices[k]];
        }
        codec::Json rec{{"name", tm.name}, {"count", tm.indices.size()}, {"indices_offset", body.size()}};
        append_vec(body, tm.indices);
        rec["values_offset"] = body.size();
        append_vec(body, values);
        rec["rounds_offset"] = body.size();
        append_vec(body, tm.rounds);
        mask_records.push_back(std::move(rec));
    }
    codec::Json dense = codec::Json::array();
    for (const auto& e : as) {
        if (is_backbone(e.group)) {
            continue;
        }
        dense.push_back(codec::Json{{"name", e.name},
                                    {"shape", e.value.shape()},
                                    {"group", std::string(group_name(e.group))},
                                    {"offset", body.size()}});
        io::append(body, e.value.data());
    }
    codec::Json h;
    h["format_version"] = kDeltaVersion;
    h["kind"] = "delta";
    h["base_hash"] = io::hex64(body_hash(bs));
    h["backbone"] = codec::to_json(adapted.config());
    h["adapter"] = adapted.adapter() ? codec::to_json(*adapted.adapter()) : codec::Json(nullptr);
    h["mask_size"] = mask.size();
    h["mask"] = std::move(mask_records);
    h["dense"] = std::move(dense);
    h["body_bytes"] = body.size();
    h["body_hash"] = io::hex64(io::fnv1a64(body));
    return pack_container(kDeltaMagic, h.dump(), body);
}

namespace {

codec::Json parse_delta_header(const Container& c) {
    codec::Json h;
    try {
        h = codec::Json::parse(c.header);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("delta: corrupt header: ") + e.what());
    }
    const int version = h.value("format_version", -1);
    if (version != kDeltaVersion) {
        throw FormatError("delta: unsupported format_version " + std::to_string(version));
    }
    if (h.value("body_bytes", std::size_t{0}) != c.body.size()) {
        throw FormatError("delta: body has " + std::to_string(c.body.size()) + " bytes, header expects " +
                          std::to_string(h.value("body_bytes", std::size_t{0})));
    }
    if (io::parse_hex64(h.value("body_hash", std::string())) != io::fnv1a64(c.body)) {
        throw FormatError("delta: body hash mismatch (file is corrupt)");
    }
    return h;
}

}  // namespace

AppliedDelta apply_delta(const Model& base, std::span<const std::uint8_t> delta) {
    const auto c = unpack_container(kDeltaMagic, delta, "delta");
    const auto h = parse_delta_header(c);
    try {
        const std::uint64_t want = io::parse_hex64(h.at("base_hash").get<std::string>());
        const std::uint64_t have = body_hash(base.params());
        if (want != have) {
            throw FormatError("delta: base checkpoint hash " + io::hex64(have) + " does not match the delta's base " +
                              io::hex64(want));
        }
        const BackboneConfig bc = codec::backbone_from_json(h.at("backbone"));
        if (!same_backbone(bc, base.config())) {
            throw FormatError("delta: backbone config differs from the base");
        }
        Model m = base;
        m.reset_head(bc.head_kind, bc.num_classes, 0);
        if (!h.at("adapter").is_null()) {
            attach(m, codec::adapter_from_json(h.at("adapter")), 0);
        }
        auto& store = m.params();

        SelectionMask mask;
        for (const auto& rec : h.at("mask")) {
            const auto name = rec.at("name").get<std::string>();
            const auto count = rec.at("count").get<std::size_t>();
            auto idx = read_array<std::uint32_t>(c.body, rec.at("indices_offset"), count, "'" + name + "' indices");
            auto vals = read_array<float>(c.body, rec.at("values_offset"), count, "'" + name + "' values");
            auto rounds = read_array<std::uint16_t>(c.body, rec.at("rounds_offset"), count, "'" + name + "' rounds");
            const auto slot = store.find(name);
            if (!slot || !is_backbone(store.entry(*slot).group)) {
                throw FormatError("delta: mask names unknown backbone tensor '" + name + "'");
            }
            Tensor& w = store.entry(*slot).value;
            for (std::size_t k = 0; k < count; ++k) {
                if (idx[k] >= w.size()) {
                    throw FormatError("delta: index " + std::to_string(idx[k]) + " outside '" + name + "'");
                }
                w[idx[k]] = vals[k];
            }
            mask.add_tensor(TensorMask{name, std::move(idx), std::move(rounds)});
        }
        if (mask.size() != h.at("mask_size").get<std::size_t>()) {
            throw FormatError("delta: mask size does not match its entries");
        }
        std::size_t dense_seen = 0;
        for (const auto& rec : h.at("dense")) {
            const auto name = rec.at("name").get<std::string>();
            const auto slot = store.find(name);
            if (!slot || is_backbone(store.entry(*slot).group)) {
                throw FormatError("delta: dense section names unexpected tensor '" + name + "'");
            }
            Tensor& w = store.entry(*slot).value;
            if (w.shape() != rec.at("shape").get<Shape>()) {
                throw FormatError("delta: dense tensor '" + name + "' has shape " +
                                  shape_to_string(rec.at("shape").get<Shape>()) + ", model expects " +
                                  shape_to_string(w.shape()));
            }
            const auto vals = read_array<float>(c.body, rec.at("offset"), w.size(), "'" + name + "'");
            std::memcpy(w.raw(), vals.data(), vals.size() * sizeof(float));
            ++dense_seen;
        }
        std::size_t non_backbone = 0;
        for (const auto& e : store) {
            non_backbone += is_backbone(e.group) ? 0 : 1;
        }
        if (dense_seen != non_backbone) {
            throw FormatError("delta: dense sections cover " + std::to_string(dense_seen) + " of " +
                              std::to_string(non_backbone) + " adapter/head tensors");
        }
        return {std::move(m), std::move(mask)};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("delta: malformed header: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("delta: ") + e.what());
    }
}

DeltaStats delta_stats(std::span<const std::uint8_t> delta) {
    const auto c = unpack_container(kDeltaMagic, delta, "delta");
    const auto h = parse_delta_header(c);
    DeltaStats s;
    s.mask_entries = h.at("mask_size").get<std::size_t>();
    for (const auto& rec : h.at("dense")) {
        s.dense_scalars += shape_numel(rec.at("shape").get<Shape>());
    }
    s.header_bytes = 16 + c.header.size();
    s.body_bytes = c.body.size();
    return s;
}

void save_delta(const std::filesystem::path& path, const Model& adapted, const SelectionMask& mask, const Model& base) {
    io::write_file(path, export_delta(adapted, mask, base));
}

AppliedDelta load_and_apply_delta(const std::filesystem::path& path, const Model& base) {
    return apply_delta(base, io::read_file(path));
}

}  // namespace sfa
