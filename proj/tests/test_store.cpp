#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "monetlab/rng.hpp"
#include "monetlab/store.hpp"

using namespace monetlab;
namespace fs = std::filesystem;

namespace {

fs::path tmpdir() {
    static fs::path p = [] {
        fs::path d = fs::temp_directory_path() / "monetlab_store_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

std::vector<unsigned char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

// minimal reader for the PNGs this repo writes (RGB8, filter 0 scanlines)
struct MiniPng {
    uint32_t w = 0, h = 0;
    std::vector<unsigned char> rgb;  // h*w*3
};

MiniPng read_png(const fs::path& path) {
    auto buf = slurp(path);
    REQUIRE(buf.size() > 8);
    MiniPng img;
    std::vector<unsigned char> idat;
    size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        const uint32_t len = (uint32_t(buf[pos]) << 24) | (uint32_t(buf[pos + 1]) << 16) |
                             (uint32_t(buf[pos + 2]) << 8) | buf[pos + 3];
        const std::string type(reinterpret_cast<char*>(&buf[pos + 4]), 4);
        const unsigned char* data = buf.data() + pos + 8;
        if (type == "IHDR") {
            img.w = (uint32_t(data[0]) << 24) | (uint32_t(data[1]) << 16) |
                    (uint32_t(data[2]) << 8) | data[3];
            img.h = (uint32_t(data[4]) << 24) | (uint32_t(data[5]) << 16) |
                    (uint32_t(data[6]) << 8) | data[7];
            REQUIRE(data[8] == 8);   // bit depth
            REQUIRE(data[9] == 2);   // RGB
        } else if (type == "IDAT") {
            idat.insert(idat.end(), data, data + len);
        }
        pos += 12 + len;
    }
    uLongf raw_len = (1 + 3ull * img.w) * img.h;
    std::vector<unsigned char> raw(raw_len);
    REQUIRE(uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) == Z_OK);
    img.rgb.resize(size_t(img.h) * img.w * 3);
    for (uint32_t y = 0; y < img.h; ++y) {
        REQUIRE(raw[size_t(y) * (1 + 3 * img.w)] == 0);  // filter byte
        std::memcpy(&img.rgb[size_t(y) * img.w * 3], &raw[size_t(y) * (1 + 3 * img.w) + 1],
                    3 * img.w);
    }
    return img;
}

}  // namespace

TEST_CASE("tensor file size matches the format layout") {
    Tensor t({2, 3});
    for (size_t i = 0; i < 6; ++i) t.data[i] = float(i);
    const fs::path p = tmpdir() / "a.mst";
    store::write_tensor(p, t);
    CHECK(fs::file_size(p) == 4 + 4 + 8 + 24);  // magic + ndim + dims + payload
}

TEST_CASE("write/read round trip is bit-identical") {
    Rng rng(5);
    Tensor t({5, 64, 64});
    for (auto& v : t.data) v = float(rng.normal());
    const fs::path p = tmpdir() / "b.mst";
    store::write_tensor(p, t);
    Tensor r = store::read_tensor(p);
    CHECK(r.dims == t.dims);
    CHECK(std::memcmp(r.data.data(), t.data.data(), 4 * t.data.size()) == 0);
}

TEST_CASE("non-finite values are rejected") {
    Tensor t({2});
    t.data[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(store::write_tensor(tmpdir() / "bad.mst", t), Error);
    t.data[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(store::write_tensor(tmpdir() / "bad.mst", t), Error);
}

TEST_CASE("corrupted magic reports a format error naming the field") {
    Tensor t({2, 2});
    const fs::path p = tmpdir() / "c.mst";
    store::write_tensor(p, t);
    auto buf = slurp(p);
    buf[0] = 'X';
    spit(p, buf);
    try {
        store::read_tensor(p);
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
}

TEST_CASE("truncated payload is an error, not a partial tensor") {
    Tensor t({4, 4});
    const fs::path p = tmpdir() / "d.mst";
    store::write_tensor(p, t);
    auto buf = slurp(p);
    buf.resize(buf.size() - 7);
    spit(p, buf);
    try {
        store::read_tensor(p);
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("size") != std::string::npos);
    }
}

TEST_CASE("dim overflow is rejected before allocation") {
    std::vector<unsigned char> buf = {'M', 'S', 'T', '1', 3, 0, 0, 0};
    for (int i = 0; i < 3; ++i) {
        buf.push_back(0xff);
        buf.push_back(0xff);
        buf.push_back(0xff);
        buf.push_back(0x7f);
    }
    const fs::path p = tmpdir() / "e.mst";
    spit(p, buf);
    CHECK_THROWS_AS(store::read_tensor(p), Error);
}

TEST_CASE("round trip of random tensors across ranks") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const int nd = 1 + int(rng.below(4));
        std::vector<uint32_t> dims;
        for (int i = 0; i < nd; ++i) dims.push_back(1 + uint32_t(rng.below(9)));
        Tensor t(dims);
        for (auto& v : t.data) v = float(rng.normal() * 100.0);
        const fs::path p = tmpdir() / "f.mst";
        store::write_tensor(p, t);
        Tensor r = store::read_tensor(p);
        REQUIRE(r.dims == t.dims);
        REQUIRE(std::memcmp(r.data.data(), t.data.data(), 4 * t.data.size()) == 0);
    }
}

TEST_CASE("png export quantization and round trip") {
    Tensor rgb({3, 2, 2});
    // pixel (0,0): zeros -> 0; (0,1): ones -> 255; (1,0): 0.5 -> 128 (half up)
    rgb.at3(0, 0, 1) = rgb.at3(1, 0, 1) = rgb.at3(2, 0, 1) = 1.f;
    rgb.at3(0, 1, 0) = rgb.at3(1, 1, 0) = rgb.at3(2, 1, 0) = 0.5f;
    rgb.at3(0, 1, 1) = 0.25f;
    const fs::path p = tmpdir() / "img.png";
    store::export_png(rgb, p);
    MiniPng img = read_png(p);
    REQUIRE(img.w == 2);
    REQUIRE(img.h == 2);
    CHECK(img.rgb[0] == 0);
    CHECK(img.rgb[3] == 255);
    CHECK(img.rgb[6] == 128);
    CHECK(img.rgb[9] == 64);  // round(0.25*255) = round(63.75)
}

TEST_CASE("png rejects wrong shapes") {
    Tensor t({4, 2, 2});
    CHECK_THROWS_AS(store::export_png(t, tmpdir() / "x.png"), Error);
}
