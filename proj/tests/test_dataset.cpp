#include "doctest.h"
#include "helpers.hpp"

#include "hynea/dataset.hpp"

#include <filesystem>

using namespace hynea;
using namespace hynea::data;

TEST_SUITE("dataset") {

TEST_CASE("generators are deterministic per seed and stay in range") {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const std::size_t cls = seed % kShapeClasses;
        const auto a = gen_shape(cls, seed), b = gen_shape(cls, seed);
        CHECK(test::same_bits(a.pixels, b.pixels));
        CHECK(a.label == cls);
        CHECK(a.pixels.shape() == Shape{1, kImageSize, kImageSize});
        CHECK(a.geometry.size >= 6.0);
        CHECK(a.geometry.size <= 11.0);
        double peak = 0.0;
        for (double v : a.pixels.data()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            peak = std::max(peak, v);
        }
        CHECK(peak > 0.5);
        CHECK_FALSE(test::same_bits(a.pixels, gen_shape(cls, seed + 1000).pixels));
    }
}

TEST_CASE("forced attribute masks are honored") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        AttributeMask m{};
        for (std::size_t k = 0; k < kAttributes; ++k) m[k] = ((seed >> k) & 1) != 0;
        const auto img = gen_attribute(m, seed);
        CHECK(img.attributes == m);
        CHECK(img.radius == (m[std::size_t(Attribute::large)] ? 12.0 : 8.0));
    }
}

TEST_CASE("scene objects never overlap") {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const auto s = gen_scene(1 + seed % kMaxSceneObjects, seed);
        REQUIRE(s.objects.size() == 1 + seed % kMaxSceneObjects);
        for (std::size_t i = 0; i < s.objects.size(); ++i) {
            const auto& o = s.objects[i];
            CHECK(o.y0() >= 0.0);
            CHECK(o.y1() <= double(kSceneSize));
            for (std::size_t j = i + 1; j < s.objects.size(); ++j) CHECK(iou(o, s.objects[j]) == 0.0);
        }
    }
    CHECK_THROWS(gen_scene(0, 1));
    CHECK_THROWS(gen_scene(5, 1));
}

TEST_CASE("iou oracle") {
    SceneObject a{0, 10, 10, 2}, b{0, 11, 10, 2};
    // 4x4 boxes shifted by one row: overlap 3x4 = 12, union 20.
    CHECK(iou(a, b) == doctest::Approx(12.0 / 20.0));
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, SceneObject{0, 30, 30, 2}) == 0.0);
}

TEST_CASE("pgm round trip quantizes to 8 bits") {
    const auto dir = std::filesystem::temp_directory_path() / "hynea_pgm_test";
    std::filesystem::create_directories(dir);
    const auto img = gen_shape(2, 9).pixels;
    write_pgm((dir / "a.pgm").string(), img);
    const auto back = read_pgm((dir / "a.pgm").string());
    REQUIRE(back.size() == img.size());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);
    CHECK_THROWS(read_pgm((dir / "missing.pgm").string()));
    std::filesystem::remove_all(dir);
}

TEST_CASE("stack_images builds a batch") {
    const auto ds = shape_dataset(5, 3);
    std::vector<Tensor> imgs;
    for (const auto& s : ds) imgs.push_back(s.pixels);
    const Tensor b = stack_images(imgs);
    CHECK(b.shape() == Shape{5, 1, kImageSize, kImageSize});
    CHECK(b[3 * kImageSize * kImageSize + 100] == imgs[3][100]);
}

}  // TEST_SUITE
