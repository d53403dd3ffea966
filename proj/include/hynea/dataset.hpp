#pragma once

#include "hynea/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hynea::data {

inline constexpr std::size_t kShapeClasses = 4;  // disk, square, cross, triangle
inline constexpr std::size_t kAttributes = 6;
inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kSceneSize = 48;
inline constexpr std::size_t kMaxSceneObjects = 4;

enum class ShapeClass : std::size_t { disk = 0, square = 1, cross = 2, triangle = 3 };
enum class Attribute : std::size_t { border = 0, hole = 1, stripes = 2, large = 3, bright = 4, tilted = 5 };

const char* shape_name(std::size_t cls);
const char* attribute_name(std::size_t attr);

using AttributeMask = std::array<bool, kAttributes>;

/// Geometry of a rendered shape, kept so tests can probe the construction.
struct ShapeGeometry {
    std::size_t cls = 0;
    double cy = 0, cx = 0;  // center, pixel units
    double size = 0;        // radius / half-extent
    double intensity = 0;
};

struct ShapeImage {
    Tensor pixels;  // [1,32,32]
    std::size_t label = 0;
    ShapeGeometry geometry;
};

struct AttributeImage {
    Tensor pixels;  // [1,32,32]
    AttributeMask attributes{};
    double cy = 0, cx = 0, radius = 0;
};

struct SceneObject {
    std::size_t cls = 0;
    double cy = 0, cx = 0;
    double size = 0;

    // Inclusive-exclusive bounding box [y0,y1) x [x0,x1).
    double y0() const { return cy - size; }
    double y1() const { return cy + size; }
    double x0() const { return cx - size; }
    double x1() const { return cx + size; }
};

struct SceneImage {
    Tensor pixels;  // [1,48,48]
    std::vector<SceneObject> objects;
};

// Shape images: size in [6, 11], intensity in [0.6, 1.0], center kept inside the canvas.
ShapeImage gen_shape(std::size_t cls, std::uint64_t seed);
// Attribute images: base disk, attributes forced by `mask` or drawn with p = 0.5.
AttributeImage gen_attribute(const std::optional<AttributeMask>& mask, std::uint64_t seed);
// Scenes of 1..4 non-overlapping shapes on a 48x48 canvas.
SceneImage gen_scene(std::size_t n_objects, std::uint64_t seed);

/// Rasterizes one shape into `canvas` ([H*W] row-major) with max-compositing.
void draw_shape(std::vector<double>& canvas, std::size_t h, std::size_t w, const ShapeGeometry& g);

double iou(const SceneObject& a, const SceneObject& b);

// Batches with uniformly drawn labels.
std::vector<ShapeImage> shape_dataset(std::size_t n, std::uint64_t seed);
std::vector<AttributeImage> attribute_dataset(std::size_t n, std::uint64_t seed);
std::vector<SceneImage> scene_dataset(std::size_t n, std::uint64_t seed);

/// Stacks [1,H,W] images into a [N,1,H,W] batch.
Tensor stack_images(const std::vector<Tensor>& images);

// PGM (P5, 8-bit, maxval 255) export of an image in [0,1].
void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path);

/// Writes `dir/NNNNN.pgm` plus `dir/manifest.json`.
void export_shapes(const std::string& dir, const std::vector<ShapeImage>& images);
void export_attributes(const std::string& dir, const std::vector<AttributeImage>& images);
void export_scenes(const std::string& dir, const std::vector<SceneImage>& images);

}  // namespace hynea::data
