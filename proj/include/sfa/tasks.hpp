#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sfa/tensor.hpp"

namespace sfa {

enum class TaskKind { shapes_segmentation, shapes_depth };
enum class ShapeKind { rectangle, circle, triangle };

std::string task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);
std::string shape_kind_name(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

using Color = std::array<float, 3>;

/// Procedural dense-prediction task. Object class c (1-based) is drawn as
/// families[(c-1) % F] in palette[((c-1) / F) % P], so telling classes apart
/// needs both shape and colour. Domains differ in families, palette and
/// background.
struct TaskSpec {
    TaskKind kind = TaskKind::shapes_segmentation;
    std::string domain = "target";
    std::size_t image_h = 32;
    std::size_t image_w = 32;
    std::size_t num_classes = 5;  // including background 0
    std::size_t min_shapes = 1;
    std::size_t max_shapes = 4;
    float min_size = 7.0f;
    float max_size = 15.0f;
    std::vector<ShapeKind> families;
    std::vector<Color> palette;
    Color background{0.3f, 0.3f, 0.3f};
    float noise = 0.06f;
    float color_jitter = 0.06f;
    float depth_min = 1.0f;
    float depth_max = 10.0f;
    std::uint64_t seed = 1;
    std::size_t train_count = 2000;
    std::size_t val_count = 200;

    void validate() const;
    static constexpr std::size_t channels = 3;
    std::size_t val_begin() const { return train_count; }
    bool operator==(const TaskSpec&) const = default;
};

/// Preset domains: "source" (pretraining), "target" and "target_b".
TaskSpec make_task(const std::string& domain, TaskKind kind = TaskKind::shapes_segmentation,
                   std::uint64_t seed = 1);

struct ShapeInstance {
    ShapeKind kind;
    std::int32_t label;  // segmentation class id
    float depth;
    Color color;
    // rectangle: [x0, x1] x [y0, y1]; circle: centre (cx, cy), radius r;
    // triangle: vertices (vx[i], vy[i]).
    float x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    float cx = 0, cy = 0, r = 0;
    std::array<float, 3> vx{}, vy{};
};

/// Whether the point (x, y) in pixel units lies inside the shape's hard-edged extent.
bool shape_contains(const ShapeInstance& shape, float x, float y);

struct Sample {
    Tensor image;                      // (H, W, 3) in [0, 1]
    std::vector<std::int32_t> classes;  // (H * W) class ids
    Tensor depth;                      // (H, W)
    std::vector<ShapeInstance> shapes;  // in draw order, last is topmost
};

/// Deterministic in (spec, index). Pixel (x, y) samples the scene at its centre.
Sample generate(const TaskSpec& spec, std::size_t index);

/// A contiguous run of samples stacked into batch tensors.
struct Dataset {
    TaskKind kind = TaskKind::shapes_segmentation;
    std::size_t image_h = 0, image_w = 0;
    Tensor images;                      // (N, H, W, 3)
    std::vector<std::int32_t> classes;  // (N * H * W)
    Tensor depth;                       // (N, H, W)

    std::size_t size() const { return images.rank() ? images.dim(0) : 0; }
    std::size_t pixels() const { return image_h * image_w; }
};

Dataset make_dataset(const TaskSpec& spec, std::size_t first, std::size_t count);
inline Dataset make_train_set(const TaskSpec& spec) { return make_dataset(spec, 0, spec.train_count); }
inline Dataset make_val_set(const TaskSpec& spec) { return make_dataset(spec, spec.val_begin(), spec.val_count); }

struct Batch {
    Tensor images;
    std::vector<std::int32_t> classes;
    Tensor depth;
};

Batch gather(const Dataset& data, std::span<const std::size_t> indices);

/// Raw little-endian arrays plus manifest.json.
void dump_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace sfa
