#include "hynea/dataset.hpp"

#include "hynea/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace hynea::data {

namespace {

constexpr double kSqrtHalf = 0.70710678118654752440;

bool inside(const ShapeGeometry& g, double y, double x) {
    const double dy = y - g.cy, dx = x - g.cx, s = g.size;
    switch (static_cast<ShapeClass>(g.cls)) {
        case ShapeClass::disk: return dy * dy + dx * dx <= s * s;
        case ShapeClass::square: return std::abs(dy) <= 0.8 * s && std::abs(dx) <= 0.8 * s;
        case ShapeClass::cross:
            return (std::abs(dy) <= s && std::abs(dx) <= s / 3.0) || (std::abs(dx) <= s && std::abs(dy) <= s / 3.0);
        case ShapeClass::triangle: {
            if (dy < -s || dy > 0.8 * s) return false;
            return std::abs(dx) <= (dy + s) / 1.8;
        }
    }
    return false;
}

std::string index_name(std::size_t i) {
    std::ostringstream os;
    os << std::setw(5) << std::setfill('0') << i << ".pgm";
    return os.str();
}

}  // namespace

const char* shape_name(std::size_t cls) {
    static const char* names[] = {"disk", "square", "cross", "triangle"};
    return cls < kShapeClasses ? names[cls] : "?";
}

const char* attribute_name(std::size_t attr) {
    static const char* names[] = {"border", "hole", "stripes", "large", "bright", "tilted"};
    return attr < kAttributes ? names[attr] : "?";
}

void draw_shape(std::vector<double>& canvas, std::size_t h, std::size_t w, const ShapeGeometry& g) {
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
            if (inside(g, static_cast<double>(i), static_cast<double>(j)))
                canvas[i * w + j] = std::max(canvas[i * w + j], g.intensity);
}

ShapeImage gen_shape(std::size_t cls, std::uint64_t seed) {
    if (cls >= kShapeClasses) throw std::invalid_argument("shape class out of range");
    Rng rng(split_seed(seed, 0x5a17));
    ShapeGeometry g;
    g.cls = cls;
    g.size = rng.uniform(6.0, 11.0);
    g.cy = rng.uniform(12.0, 19.0);
    g.cx = rng.uniform(12.0, 19.0);
    g.intensity = rng.uniform(0.6, 1.0);
    std::vector<double> canvas(kImageSize * kImageSize, 0.0);
    draw_shape(canvas, kImageSize, kImageSize, g);
    return ShapeImage{Tensor({1, kImageSize, kImageSize}, std::move(canvas)), cls, g};
}

AttributeImage gen_attribute(const std::optional<AttributeMask>& mask, std::uint64_t seed) {
    Rng rng(split_seed(seed, 0xa771));
    AttributeMask attrs{};
    for (std::size_t a = 0; a < kAttributes; ++a) {
        const bool drawn = rng.bernoulli(0.5);
        attrs[a] = mask ? (*mask)[a] : drawn;
    }
    const auto has = [&](Attribute a) { return attrs[static_cast<std::size_t>(a)]; };
    const double cy = rng.uniform(14.0, 18.0);
    const double cx = rng.uniform(14.0, 18.0);
    const double radius = has(Attribute::large) ? 12.0 : 8.0;
    const double level = has(Attribute::bright) ? 0.95 : 0.55;
    std::vector<double> canvas(kImageSize * kImageSize, 0.0);
    for (std::size_t i = 0; i < kImageSize; ++i) {
        for (std::size_t j = 0; j < kImageSize; ++j) {
            const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
            bool in;
            if (has(Attribute::tilted)) {
                const double u = (dy + dx) * kSqrtHalf, v = (dy - dx) * kSqrtHalf;
                const double minor = 0.55 * radius;
                in = (u * u) / (radius * radius) + (v * v) / (minor * minor) <= 1.0;
            } else {
                in = dy * dy + dx * dx <= radius * radius;
            }
            if (!in) continue;
            double v = level;
            if (has(Attribute::hole) && dy * dy + dx * dx <= 9.0) v = 0.0;
            if (has(Attribute::stripes) && (i / 2) % 2 == 1) v *= 0.3;
            canvas[i * kImageSize + j] = v;
        }
    }
    if (has(Attribute::border)) {
        for (std::size_t i = 0; i < kImageSize; ++i)
            for (std::size_t j = 0; j < kImageSize; ++j) {
                const std::size_t edge = std::min({i, j, kImageSize - 1 - i, kImageSize - 1 - j});
                if (edge < 2) canvas[i * kImageSize + j] = 0.8;
            }
    }
    return AttributeImage{Tensor({1, kImageSize, kImageSize}, std::move(canvas)), attrs, cy, cx, radius};
}

double iou(const SceneObject& a, const SceneObject& b) {
    const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double inter = ih * iw;
    const double area_a = (a.y1() - a.y0()) * (a.x1() - a.x0());
    const double area_b = (b.y1() - b.y0()) * (b.x1() - b.x0());
    return inter / (area_a + area_b - inter);
}

SceneImage gen_scene(std::size_t n_objects, std::uint64_t seed) {
    if (n_objects < 1 || n_objects > kMaxSceneObjects) throw std::invalid_argument("scenes hold 1..4 objects");
    Rng rng(split_seed(seed, 0x5ce7e));
    constexpr int kMaxAttempts = 1000;
    std::vector<SceneObject> objects;
    int attempts = 0;
    while (objects.size() < n_objects) {
        if (++attempts > kMaxAttempts) {
            throw std::runtime_error("scene placement failed after 1000 attempts (seed " + std::to_string(seed) + ")");
        }
        SceneObject o;
        o.cls = rng.uniform_int(kShapeClasses);
        o.size = rng.uniform(5.0, 10.0);
        const double lo = o.size + 1.0, hi = static_cast<double>(kSceneSize) - o.size - 2.0;
        o.cy = rng.uniform(lo, hi);
        o.cx = rng.uniform(lo, hi);
        bool clear = true;
        for (const auto& p : objects) {
            // One pixel of separation keeps rasterized shapes disjoint.
            SceneObject grown = p;
            grown.size += 1.0;
            if (iou(grown, o) > 0.0) clear = false;
        }
        if (clear) objects.push_back(o);
    }
    std::vector<double> canvas(kSceneSize * kSceneSize, 0.0);
    for (const auto& o : objects) {
        ShapeGeometry g{o.cls, o.cy, o.cx, o.size, rng.uniform(0.6, 1.0)};
        draw_shape(canvas, kSceneSize, kSceneSize, g);
    }
    return SceneImage{Tensor({1, kSceneSize, kSceneSize}, std::move(canvas)), std::move(objects)};
}

std::vector<ShapeImage> shape_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(split_seed(seed, 1));
    std::vector<ShapeImage> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(gen_shape(rng.uniform_int(kShapeClasses), split_seed(seed, 100 + i)));
    return out;
}

std::vector<AttributeImage> attribute_dataset(std::size_t n, std::uint64_t seed) {
    std::vector<AttributeImage> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(gen_attribute(std::nullopt, split_seed(seed, 100 + i)));
    return out;
}

std::vector<SceneImage> scene_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(split_seed(seed, 2));
    std::vector<SceneImage> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(gen_scene(1 + rng.uniform_int(kMaxSceneObjects), split_seed(seed, 100 + i)));
    return out;
}

Tensor stack_images(const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("cannot stack an empty image list");
    const Shape s = images.front().shape();
    std::vector<double> v;
    v.reserve(images.size() * images.front().size());
    for (const auto& im : images) {
        if (im.shape() != s) throw ShapeError("stack_images: mixed shapes");
        v.insert(v.end(), im.data().begin(), im.data().end());
    }
    Shape out{images.size()};
    out.insert(out.end(), s.begin(), s.end());
    return Tensor(out, std::move(v));
}

void write_pgm(const std::string& path, const Tensor& image) {
    if (image.rank() < 2) throw ShapeError("PGM export needs an image");
    const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
    if (image.size() != h * w) throw ShapeError("PGM export supports single-channel images only");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "P5\n" << w << ' ' << h << "\n255\n";
    for (double v : image.data()) {
        const double c = std::clamp(v, 0.0, 1.0);
        f.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
}

Tensor read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255) throw std::runtime_error(path + " is not an 8-bit P5 PGM");
    f.get();
    std::vector<double> v(w * h);
    for (auto& x : v) x = static_cast<double>(static_cast<unsigned char>(f.get())) / 255.0;
    if (!f) throw std::runtime_error("truncated PGM " + path);
    return Tensor({1, h, w}, std::move(v));
}

void export_shapes(const std::string& dir, const std::vector<ShapeImage>& images) {
    std::filesystem::create_directories(dir);
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        write_pgm(dir + "/" + index_name(i), images[i].pixels);
        m.push_back({{"filename", index_name(i)}, {"label", images[i].label}});
    }
    std::ofstream(dir + "/manifest.json") << m.dump(2) << '\n';
}

void export_attributes(const std::string& dir, const std::vector<AttributeImage>& images) {
    std::filesystem::create_directories(dir);
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        write_pgm(dir + "/" + index_name(i), images[i].pixels);
        nlohmann::json attrs = nlohmann::json::object();
        for (std::size_t a = 0; a < kAttributes; ++a) attrs[attribute_name(a)] = images[i].attributes[a];
        m.push_back({{"filename", index_name(i)}, {"attributes", attrs}});
    }
    std::ofstream(dir + "/manifest.json") << m.dump(2) << '\n';
}

void export_scenes(const std::string& dir, const std::vector<SceneImage>& images) {
    std::filesystem::create_directories(dir);
    nlohmann::json m = nlohmann::json::array();
    for (std::size_t i = 0; i < images.size(); ++i) {
        write_pgm(dir + "/" + index_name(i), images[i].pixels);
        nlohmann::json objs = nlohmann::json::array();
        for (const auto& o : images[i].objects) {
            objs.push_back({{"class", o.cls}, {"center", {o.cy, o.cx}}, {"size", o.size}});
        }
        m.push_back({{"filename", index_name(i)}, {"objects", objs}});
    }
    std::ofstream(dir + "/manifest.json") << m.dump(2) << '\n';
}

}  // namespace hynea::data
