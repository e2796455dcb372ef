#include "sfa/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "sfa/errors.hpp"
#include "sfa/io.hpp"
#include "sfa/rng.hpp"

namespace sfa {

using nlohmann::json;

std::string task_kind_name(TaskKind kind) {
    return kind == TaskKind::shapes_segmentation ? "shapes_segmentation" : "shapes_depth";
}

TaskKind parse_task_kind(const std::string& name) {
    if (name == "shapes_segmentation" || name == "segmentation") {
        return TaskKind::shapes_segmentation;
    }
    if (name == "shapes_depth" || name == "depth") {
        return TaskKind::shapes_depth;
    }
    throw ConfigError("unknown task kind '" + name + "'");
}

std::string shape_kind_name(ShapeKind kind) {
    switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

ShapeKind parse_shape_kind(const std::string& name) {
    for (auto k : {ShapeKind::rectangle, ShapeKind::circle, ShapeKind::triangle}) {
        if (shape_kind_name(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown shape kind '" + name + "'");
}

void TaskSpec::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("task spec: " + what); };
    if (image_h == 0 || image_w == 0) {
        fail("image size must be positive");
    }
    if (kind == TaskKind::shapes_segmentation && num_classes < 2) {
        fail("segmentation needs at least 2 classes");
    }
    if (min_shapes > max_shapes) {
        fail("min_shapes exceeds max_shapes");
    }
    if (!(min_size > 0.0f) || min_size > max_size) {
        fail("shape size range is invalid");
    }
    if (max_shapes > 0 && (families.empty() || palette.empty())) {
        fail("families and palette must be non-empty");
    }
    if (!(depth_min >= 0.0f) || depth_min >= depth_max) {
        fail("depth range is invalid");
    }
    if (noise < 0.0f || color_jitter < 0.0f) {
        fail("noise and jitter must be non-negative");
    }
}

TaskSpec make_task(const std::string& domain, TaskKind kind, std::uint64_t seed) {
    TaskSpec t;
    t.kind = kind;
    t.domain = domain;
    t.seed = seed;
    if (domain == "source") {
        t.families = {ShapeKind::rectangle, ShapeKind::circle};
        t.palette = {{0.85f, 0.15f, 0.15f}, {0.15f, 0.75f, 0.2f}};
        t.background = {0.15f, 0.15f, 0.2f};
    } else if (domain == "target") {
        t.families = {ShapeKind::triangle, ShapeKind::circle};
        t.palette = {{0.1f, 0.7f, 0.8f}, {0.8f, 0.2f, 0.7f}};
        t.background = {0.35f, 0.3f, 0.25f};
    } else if (domain == "target_b") {
        t.families = {ShapeKind::rectangle, ShapeKind::triangle};
        t.palette = {{0.95f, 0.6f, 0.1f}, {0.45f, 0.25f, 0.85f}};
        t.background = {0.25f, 0.35f, 0.3f};
    } else {
        throw ConfigError("unknown task domain '" + domain + "' (expected source, target or target_b)");
    }
    return t;
}

bool shape_contains(const ShapeInstance& s, float x, float y) {
    switch (s.kind) {
    case ShapeKind::rectangle: return x >= s.x0 && x <= s.x1 && y >= s.y0 && y <= s.y1;
    case ShapeKind::circle: {
        const float dx = x - s.cx, dy = y - s.cy;
        return dx * dx + dy * dy <= s.r * s.r;
    }
    case ShapeKind::triangle: {
        auto edge = [&](int i, int j) {
            return (s.vx[j] - s.vx[i]) * (y - s.vy[i]) - (s.vy[j] - s.vy[i]) * (x - s.vx[i]);
        };
        const float e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
        return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
    }
    return false;
}

namespace {

std::uint64_t domain_tag(const std::string& domain) {
    return io::fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(domain.data()), domain.size()));
}

ShapeInstance random_shape(const TaskSpec& spec, Rng& rng) {
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    const std::size_t object_classes = spec.kind == TaskKind::shapes_segmentation ? spec.num_classes - 1
                                                                                   : spec.families.size() * spec.palette.size();
    const auto cls = static_cast<std::size_t>(unit(rng) * static_cast<float>(object_classes)) % object_classes;
    ShapeInstance s;
    s.kind = spec.families[cls % spec.families.size()];
    s.label = static_cast<std::int32_t>(cls + 1);
    const Color base = spec.palette[(cls / spec.families.size()) % spec.palette.size()];
    for (std::size_t c = 0; c < 3; ++c) {
        s.color[c] = std::clamp(base[c] + (unit(rng) * 2.0f - 1.0f) * spec.color_jitter, 0.0f, 1.0f);
    }
    const float size = spec.min_size + unit(rng) * (spec.max_size - spec.min_size);
    const float span = spec.max_size - spec.min_size;
    const float closeness = span > 0.0f ? (size - spec.min_size) / span : 0.5f;
    // Larger shapes sit closer to the camera.
    s.depth = spec.depth_min + (spec.depth_max - spec.depth_min) * (0.9f - 0.8f * closeness);
    const float cx = unit(rng) * static_cast<float>(spec.image_w);
    const float cy = unit(rng) * static_cast<float>(spec.image_h);
    switch (s.kind) {
    case ShapeKind::rectangle: {
        const float w = size * (0.6f + 0.4f * unit(rng));
        const float h = size * (0.6f + 0.4f * unit(rng));
        s.x0 = cx - w / 2;
        s.x1 = cx + w / 2;
        s.y0 = cy - h / 2;
        s.y1 = cy + h / 2;
        break;
    }
    case ShapeKind::circle:
        s.cx = cx;
        s.cy = cy;
        s.r = size / 2;
        break;
    case ShapeKind::triangle: {
        const float radius = size * 0.575f;
        const float rot = unit(rng) * 2.0f * std::numbers::pi_v<float>;
        for (int k = 0; k < 3; ++k) {
            const float a = rot + static_cast<float>(k) * 2.0f * std::numbers::pi_v<float> / 3.0f;
            s.vx[k] = cx + radius * std::cos(a);
            s.vy[k] = cy + radius * std::sin(a);
        }
        break;
    }
    }
    return s;
}

}  // namespace

Sample generate(const TaskSpec& spec, std::size_t index) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, {domain_tag(spec.domain), static_cast<std::uint64_t>(spec.kind), index}));
    std::uniform_int_distribution<std::size_t> count_dist(spec.min_shapes, spec.max_shapes);
    const std::size_t n = count_dist(rng);
    Sample out;
    for (std::size_t i = 0; i < n; ++i) {
        out.shapes.push_back(random_shape(spec, rng));
    }
    // Painter's order: far shapes first so the topmost shape is also the nearest.
    std::stable_sort(out.shapes.begin(), out.shapes.end(),
                     [](const ShapeInstance& a, const ShapeInstance& b) { return a.depth > b.depth; });

    const std::size_t h = spec.image_h, w = spec.image_w;
    out.image = Tensor({h, w, TaskSpec::channels});
    out.classes.assign(h * w, 0);
    out.depth = Tensor({h, w}, spec.depth_max);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const float px = static_cast<float>(x) + 0.5f, py = static_cast<float>(y) + 0.5f;
            Color color = spec.background;
            for (const auto& s : out.shapes) {
                if (shape_contains(s, px, py)) {
                    color = s.color;
                    out.classes[y * w + x] = s.label;
                    out.depth[y * w + x] = s.depth;
                }
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const float v = color[c] + spec.noise * noise(rng);
                out.image[(y * w + x) * 3 + c] = std::clamp(v, 0.0f, 1.0f);
            }
        }
    }
    if (spec.kind == TaskKind::shapes_depth) {
        for (auto& s : out.shapes) {
            s.label = 1;
        }
        for (auto& c : out.classes) {
            c = c ? 1 : 0;
        }
    }
    return out;
}

Dataset make_dataset(const TaskSpec& spec, std::size_t first, std::size_t count) {
    spec.validate();
    Dataset d;
    d.kind = spec.kind;
    d.image_h = spec.image_h;
    d.image_w = spec.image_w;
    const std::size_t px = spec.image_h * spec.image_w;
    d.images = Tensor({count, spec.image_h, spec.image_w, TaskSpec::channels});
    d.depth = Tensor({count, spec.image_h, spec.image_w});
    d.classes.resize(count * px);
    for (std::size_t i = 0; i < count; ++i) {
        Sample s = generate(spec, first + i);
        std::copy(s.image.data().begin(), s.image.data().end(), d.images.raw() + i * px * 3);
        std::copy(s.depth.data().begin(), s.depth.data().end(), d.depth.raw() + i * px);
        std::copy(s.classes.begin(), s.classes.end(), d.classes.begin() + static_cast<std::ptrdiff_t>(i * px));
    }
    return d;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
    const std::size_t px = data.pixels(), b = indices.size();
    Batch out;
    out.images = Tensor({b, data.image_h, data.image_w, TaskSpec::channels});
    out.depth = Tensor({b, data.image_h, data.image_w});
    out.classes.resize(b * px);
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = indices[i];
        if (j >= data.size()) {
            throw std::out_of_range("gather: sample " + std::to_string(j) + " out of range");
        }
        std::copy_n(data.images.raw() + j * px * 3, px * 3, out.images.raw() + i * px * 3);
        std::copy_n(data.depth.raw() + j * px, px, out.depth.raw() + i * px);
        std::copy_n(data.classes.begin() + static_cast<std::ptrdiff_t>(j * px), px,
                    out.classes.begin() + static_cast<std::ptrdiff_t>(i * px));
    }
    return out;
}

namespace {
constexpr int kDatasetFormatVersion = 1;
}

void dump_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::uint8_t> bytes;
    io::append(bytes, data.images.data());
    io::write_file(dir / "images.f32", bytes);
    bytes.clear();
    io::append(bytes, std::span<const std::int32_t>(data.classes));
    io::write_file(dir / "classes.i32", bytes);
    bytes.clear();
    io::append(bytes, data.depth.data());
    io::write_file(dir / "depth.f32", bytes);

    json manifest = json::object();
    manifest["format_version"] = kDatasetFormatVersion;
    manifest["kind"] = task_kind_name(data.kind);
    manifest["count"] = data.size();
    manifest["arrays"] = json::array({
        {{"file", "images.f32"}, {"dtype", "float32"}, {"shape", data.images.shape()}},
        {{"file", "classes.i32"}, {"dtype", "int32"}, {"shape", {data.size(), data.image_h, data.image_w}}},
        {{"file", "depth.f32"}, {"dtype", "float32"}, {"shape", data.depth.shape()}},
    });
    const auto text = manifest.dump(2);
    io::write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto raw = io::read_file(dir / "manifest.json");
    json manifest;
    try {
        manifest = json::parse(raw.begin(), raw.end());
    } catch (const json::exception& e) {
        throw FormatError("dataset manifest: " + std::string(e.what()));
    }
    if (manifest.value("format_version", 0) != kDatasetFormatVersion) {
        throw FormatError("dataset manifest: unsupported format_version");
    }
    Dataset d;
    d.kind = parse_task_kind(manifest.at("kind").get<std::string>());
    const auto count = manifest.at("count").get<std::size_t>();
    for (const auto& a : manifest.at("arrays")) {
        const auto file = a.at("file").get<std::string>();
        const auto shape = a.at("shape").get<Shape>();
        const auto bytes = io::read_file(dir / file);
        const std::size_t n = shape_numel(shape);
        if (bytes.size() != n * 4) {
            throw FormatError("dataset array '" + file + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(n * 4));
        }
        if (file == "images.f32") {
            d.images = Tensor(shape, io::decode<float>(bytes));
            d.image_h = shape.at(1);
            d.image_w = shape.at(2);
        } else if (file == "classes.i32") {
            d.classes = io::decode<std::int32_t>(bytes);
        } else if (file == "depth.f32") {
            d.depth = Tensor(shape, io::decode<float>(bytes));
        }
    }
    if (d.size() != count || d.classes.size() != count * d.pixels() || d.depth.size() != count * d.pixels()) {
        throw FormatError("dataset arrays disagree with manifest count");
    }
    return d;
}

}  // namespace sfa
