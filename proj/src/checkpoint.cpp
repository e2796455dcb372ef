#include "sfa/checkpoint.hpp"

#include <cstring>

#include "codec.hpp"
#include "sfa/errors.hpp"
#include "sfa/io.hpp"

namespace sfa {

namespace {

std::span<const std::uint8_t> bytes_of(const Tensor& t) {
    return {reinterpret_cast<const std::uint8_t*>(t.raw()), t.size() * sizeof(float)};
}

}  // namespace

std::uint64_t body_hash(const ParameterStore& store) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : store) {
        for (auto b : bytes_of(e.value)) {
            h ^= b;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::vector<std::uint8_t> pack_container(const char (&magic)[9], const std::string& header,
                                         std::span<const std::uint8_t> body) {
    std::vector<std::uint8_t> out(16 + header.size() + body.size());
    const std::uint64_t len = header.size();
    std::memcpy(out.data(), magic, 8);
    std::memcpy(out.data() + 8, &len, sizeof len);
    std::memcpy(out.data() + 16, header.data(), header.size());
    if (!body.empty()) {
        std::memcpy(out.data() + 16 + header.size(), body.data(), body.size());
    }
    return out;
}

Container unpack_container(const char (&magic)[9], std::span<const std::uint8_t> bytes, const std::string& what) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, 8) != 0) {
        throw FormatError(what + ": not a " + std::string(magic, 8) + " file");
    }
    const std::uint64_t len = io::read_u64(bytes, 8);
    if (len > bytes.size() - 16) {
        throw FormatError(what + ": header length " + std::to_string(len) + " exceeds file size");
    }
    return {std::string(reinterpret_cast<const char*>(bytes.data()) + 16, len), bytes.subspan(16 + len)};
}

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const SelectionMask* mask) {
    const auto& store = model.params();
    codec::Json tensors = codec::Json::array();
    std::vector<std::uint8_t> body;
    body.reserve(store.count_all() * sizeof(float));
    for (const auto& e : store) {
        tensors.push_back(codec::Json{{"name", e.name},
                                      {"shape", e.value.shape()},
                                      {"dtype", "f32"},
                                      {"offset", body.size()},
                                      {"group", std::string(group_name(e.group))}});
        const auto b = bytes_of(e.value);
        body.insert(body.end(), b.begin(), b.end());
    }
    codec::Json h;
    h["format_version"] = kCheckpointVersion;
    h["kind"] = "checkpoint";
    h["backbone"] = codec::to_json(model.config());
    h["adapter"] = model.adapter() ? codec::to_json(*model.adapter()) : codec::Json(nullptr);
    h["tensors"] = std::move(tensors);
    h["body_bytes"] = body.size();
    h["body_hash"] = io::hex64(io::fnv1a64(body));
    h["mask"] = mask ? codec::to_json(*mask) : codec::Json(nullptr);
    return pack_container(kCheckpointMagic, h.dump(), body);
}

LoadedCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    const auto c = unpack_container(kCheckpointMagic, bytes, "checkpoint");
    codec::Json h;
    try {
        h = codec::Json::parse(c.header);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("checkpoint: corrupt header: ") + e.what());
    }
    try {
        const int version = h.at("format_version").get<int>();
        if (version != kCheckpointVersion) {
            throw FormatError("checkpoint: unsupported format_version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
        }
        const BackboneConfig bc = codec::backbone_from_json(h.at("backbone"));
        std::optional<AdapterConfig> adapter;
        if (!h.at("adapter").is_null()) {
            adapter = codec::adapter_from_json(h.at("adapter"));
        }
        ParameterStore store;
        std::size_t expected_offset = 0;
        for (const auto& t : h.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            const auto shape = t.at("shape").get<Shape>();
            const auto offset = t.at("offset").get<std::size_t>();
            if (t.at("dtype").get<std::string>() != "f32") {
                throw FormatError("checkpoint: tensor '" + name + "' has unsupported dtype");
            }
            if (offset != expected_offset) {
                throw FormatError("checkpoint: tensor '" + name + "' offset " + std::to_string(offset) +
                                  " is not contiguous (expected " + std::to_string(expected_offset) + ")");
            }
            const std::size_t nbytes = shape_numel(shape) * sizeof(float);
            if (offset + nbytes > c.body.size()) {
                throw FormatError("checkpoint: body truncated inside tensor '" + name + "' (needs bytes up to " +
                                  std::to_string(offset + nbytes) + ", body has " + std::to_string(c.body.size()) +
                                  ")");
            }
            Tensor value(shape);
            std::memcpy(value.raw(), c.body.data() + offset, nbytes);
            store.add(name, parse_group(t.at("group").get<std::string>()), std::move(value));
            expected_offset += nbytes;
        }
        if (expected_offset != c.body.size() || h.at("body_bytes").get<std::size_t>() != c.body.size()) {
            throw FormatError("checkpoint: body has " + std::to_string(c.body.size()) + " bytes, header describes " +
                              std::to_string(expected_offset));
        }
        const std::uint64_t hash = io::fnv1a64(c.body);
        if (io::parse_hex64(h.at("body_hash").get<std::string>()) != hash) {
            throw FormatError("checkpoint: body hash mismatch (file is corrupt)");
        }
        LoadedCheckpoint out{Model::from_store(bc, std::move(store), adapter), std::nullopt, hash};
        if (!h.at("mask").is_null()) {
            out.mask = codec::mask_from_json(h.at("mask"));
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const SelectionMask* mask) {
    io::write_file(path, encode_checkpoint(model, mask));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace sfa
