// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "veggie/errors.hpp"
#include "veggie/media.hpp"
#include "veggie/png_io.hpp"
#include "veggie/rng.hpp"

using namespace veggie;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "veggie_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

VideoClip random_8bit_clip(Rng& rng, int n, int H, int W, int C) {
    Tensor t({n, H, W, C});
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
    return VideoClip(std::move(t), 8.0);
}

}  // namespace

TEST_CASE("png encode/decode round trip") {
    Rng rng(100);
    for (int c : {1, 3}) {
        png::Image img;
        img.height = 9;
        img.width = 7;
        img.channels = c;
        img.pixels.resize(static_cast<size_t>(9 * 7 * c));
        for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        png::Image back = png::decode(png::encode(img));
        CHECK(back.height == 9);
        CHECK(back.width == 7);
        CHECK(back.channels == c);
        CHECK(back.pixels == img.pixels);
    }
}

TEST_CASE("save/load identity for 8-bit clips") {
    Rng rng(101);
    auto dir = tmpdir("roundtrip");
    for (int trial = 0; trial < 4; ++trial) {
        VideoClip clip = random_8bit_clip(rng, 3, 8, 6, trial % 2 ? 1 : 3);
        save_clip(clip, dir.string());
        VideoClip back = load_clip(dir.string());
        REQUIRE(back.frames().shape() == clip.frames().shape());
        for (std::int64_t i = 0; i < clip.frames().numel(); ++i)
            CHECK(back.frames()[i] == clip.frames()[i]);
    }
}

TEST_CASE("save then save again yields byte-identical files") {
    Rng rng(102);
    VideoClip clip = random_8bit_clip(rng, 2, 8, 8, 3);
    auto d1 = tmpdir("bytes1"), d2 = tmpdir("bytes2");
    save_clip(clip, d1.string());
    save_clip(load_clip(d1.string()), d2.string());
    for (const auto& e : fs::directory_iterator(d1)) {
        if (e.path().extension() != ".png") continue;
        std::ifstream a(e.path(), std::ios::binary), b(d2 / e.path().filename(), std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }
}

TEST_CASE("float clips survive within quantization bound") {
    Rng rng(103);
    Tensor t({2, 4, 4, 3});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
    VideoClip clip(t, 8.0);
    auto dir = tmpdir("quant");
    save_clip(clip, dir.string());
    VideoClip back = load_clip(dir.string());
    for (std::int64_t i = 0; i < t.numel(); ++i)
        CHECK(std::fabs(back.frames()[i] - t[i]) <= 1.0 / 255.0 + 1e-12);
}

TEST_CASE("gapped frame indices raise MissingFrame") {
    Rng rng(104);
    VideoClip clip = random_8bit_clip(rng, 4, 4, 4, 3);
    auto dir = tmpdir("gap");
    save_clip(clip, dir.string());
    fs::remove(dir / "frame_00002.png");
    CHECK_THROWS_AS(load_clip(dir.string()), MissingFrame);
}

TEST_CASE("mixed frame dimensions raise DimensionMismatch") {
    auto dir = tmpdir("mixed");
    png::Image a;
    a.height = a.width = 4;
    a.channels = 3;
    a.pixels.assign(48, 0);
    png::write_file((dir / "frame_00000.png").string(), a);
    a.height = 6;
    a.pixels.assign(72, 0);
    png::write_file((dir / "frame_00001.png").string(), a);
    CHECK_THROWS_AS(load_clip(dir.string()), DimensionMismatch);
}

TEST_CASE("meta.json carries fps") {
    Rng rng(105);
    VideoClip clip(random_8bit_clip(rng, 1, 4, 4, 3).frames(), 8.0);
    auto dir = tmpdir("meta");
    save_clip(clip, dir.string());
    std::ifstream f(dir / "meta.json");
    std::string text((std::istreambuf_iterator<char>(f)), {});
    CHECK(text.find("\"fps\": 8") != std::string::npos);
    CHECK(load_clip(dir.string()).fps() == 8.0);
}

TEST_CASE("uniform frame sampling") {
    CHECK(uniform_frame_indices(8, 8) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(uniform_frame_indices(15, 8) == std::vector<int>{0, 2, 4, 6, 8, 10, 12, 14});
    CHECK(uniform_frame_indices(5, 1) == std::vector<int>{0});
    CHECK_THROWS_AS(uniform_frame_indices(4, 5), InvalidSampleCount);
    // monotone property
    Rng rng(106);
    for (int trial = 0; trial < 20; ++trial) {
        int n = static_cast<int>(rng.uniform_int(1, 40));
        int k = static_cast<int>(rng.uniform_int(1, n));
        auto idx = uniform_frame_indices(n, k);
        for (size_t i = 1; i < idx.size(); ++i) CHECK(idx[i] > idx[i - 1]);
        CHECK(idx.front() == 0);
        if (k > 1) CHECK(idx.back() == n - 1);
    }
}

TEST_CASE("manifest rejects unknown skill and duplicate ids") {
    auto dir = tmpdir("manifest");
    Rng rng(107);
    save_clip(random_8bit_clip(rng, 1, 4, 4, 3), (dir / "src").string());
    {
        std::ofstream f(dir / "bad_skill.json");
        f << R"({"version":"veggie-manifest/1","records":[
            {"id":"a","skill":"teleportation","instruction":"x","source_dir":"src"}]})";
    }
    CHECK_THROWS_AS(DatasetManifest::load((dir / "bad_skill.json").string()), ManifestError);
    {
        std::ofstream f(dir / "dup.json");
        f << R"({"version":"veggie-manifest/1","records":[
            {"id":"a","skill":"grounding","instruction":"x","source_dir":"src"},
            {"id":"a","skill":"removal","instruction":"y","source_dir":"src"}]})";
    }
    CHECK_THROWS_AS(DatasetManifest::load((dir / "dup.json").string()), ManifestError);
    {
        std::ofstream f(dir / "ok.json");
        f << R"({"version":"veggie-manifest/1","records":[
            {"id":"a","skill":"grounding","instruction":"x","source_dir":"src"}]})";
    }
    DatasetManifest m = DatasetManifest::load((dir / "ok.json").string());
    REQUIRE(m.records.size() == 1);
    CHECK(m.records[0].skill == Skill::grounding);
    InstructionSample s = m.load_sample(m.records[0], dir.string());
    CHECK(s.source.n() == 1);
}

TEST_CASE("mask round trip") {
    Tensor m({2, 4, 4});
    m.at({0, 1, 2}) = 1.0;
    m.at({1, 3, 3}) = 1.0;
    MaskVideo mask(m);
    auto dir = tmpdir("mask");
    save_mask(mask, dir.string());
    MaskVideo back = load_mask(dir.string());
    for (std::int64_t i = 0; i < m.numel(); ++i) CHECK(back.masks()[i] == m[i]);
}
