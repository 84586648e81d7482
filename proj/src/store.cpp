#include "monetlab/store.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#ifdef __unix__
#include <fcntl.h>
#include <unistd.h>
#endif

namespace monetlab::store {

namespace fs = std::filesystem;

static constexpr char kMagic[4] = {'M', 'S', 'T', '1'};

static void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(v & 0xff);
    out.push_back((v >> 8) & 0xff);
    out.push_back((v >> 16) & 0xff);
    out.push_back((v >> 24) & 0xff);
}

void write_tensor(const fs::path& path, const Tensor& t, bool durable) {
    for (float v : t.data) {
        if (!std::isfinite(v))
            throw data_error("write_tensor " + path.string() + ": non-finite value");
    }
    if (t.dims.empty()) throw data_error("write_tensor " + path.string() + ": rank-0 tensor");
    if (t.data.size() != t.element_count())
        throw data_error("write_tensor " + path.string() + ": dims/payload mismatch");

    std::vector<unsigned char> buf;
    buf.reserve(8 + 4 * t.dims.size() + 4 * t.data.size());
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) put_u32(buf, d);
    // float32 little-endian; host is little-endian on every supported target
    static_assert(sizeof(float) == 4);
    size_t off = buf.size();
    buf.resize(off + 4 * t.data.size());
    std::memcpy(buf.data() + off, t.data.data(), 4 * t.data.size());

    FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw data_error("write_tensor: cannot open " + path.string());
    size_t wrote = std::fwrite(buf.data(), 1, buf.size(), f);
    if (wrote != buf.size()) {
        std::fclose(f);
        throw data_error("write_tensor: short write to " + path.string());
    }
    if (durable) {
        std::fflush(f);
#ifdef __unix__
        fsync(fileno(f));
#endif
    }
    std::fclose(f);
}

static uint32_t get_u32(const unsigned char* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

Tensor read_tensor(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("read_tensor: cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    const std::string where = path.string();
    if (buf.size() < 8) throw data_error("read_tensor " + where + ": truncated header");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw data_error("read_tensor " + where + ": bad magic");
    uint32_t ndim = get_u32(buf.data() + 4);
    if (ndim == 0 || ndim > 8) throw data_error("read_tensor " + where + ": bad ndim field");
    if (buf.size() < 8 + 4ull * ndim)
        throw data_error("read_tensor " + where + ": truncated dims field");

    Tensor t;
    t.dims.resize(ndim);
    uint64_t count = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        t.dims[i] = get_u32(buf.data() + 8 + 4 * i);
        count *= t.dims[i];
        if (count > (1ull << 32))
            throw data_error("read_tensor " + where + ": dims field overflows");
    }
    size_t expect = 8 + 4ull * ndim + 4ull * count;
    if (buf.size() != expect)
        throw data_error("read_tensor " + where + ": payload size mismatch (expected " +
                         std::to_string(expect) + " bytes, file has " +
                         std::to_string(buf.size()) + ")");
    t.data.resize(count);
    std::memcpy(t.data.data(), buf.data() + 8 + 4ull * ndim, 4ull * count);
    return t;
}

// --- PNG export -------------------------------------------------------------
// Minimal still-image writer: IHDR + single zlib-compressed IDAT + IEND.

static void png_chunk(std::vector<unsigned char>& out, const char type[4],
                      const unsigned char* data, size_t n) {
    unsigned char len[4] = {(unsigned char)((n >> 24) & 0xff), (unsigned char)((n >> 16) & 0xff),
                            (unsigned char)((n >> 8) & 0xff), (unsigned char)(n & 0xff)};
    out.insert(out.end(), len, len + 4);
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + n);
    uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + n));
    unsigned char crcb[4] = {(unsigned char)((crc >> 24) & 0xff), (unsigned char)((crc >> 16) & 0xff),
                             (unsigned char)((crc >> 8) & 0xff), (unsigned char)(crc & 0xff)};
    out.insert(out.end(), crcb, crcb + 4);
}

void export_png(const Tensor& rgb, const fs::path& path) {
    if (rgb.dims.size() != 3 || rgb.dims[0] != 3)
        throw data_error("export_png: expected 3xHxW tensor, got " + rgb.shape_str());
    const uint32_t h = rgb.dims[1], w = rgb.dims[2];

    // filter byte 0 per scanline, RGB8
    std::vector<unsigned char> raw((1 + 3ull * w) * h);
    size_t p = 0;
    for (uint32_t y = 0; y < h; ++y) {
        raw[p++] = 0;
        for (uint32_t x = 0; x < w; ++x) {
            for (uint32_t c = 0; c < 3; ++c) {
                float v = rgb.at3(c, y, x);
                if (v < 0.f) v = 0.f;
                if (v > 1.f) v = 1.f;
                raw[p++] = static_cast<unsigned char>(std::floor(v * 255.f + 0.5f));
            }
        }
    }

    uLongf zcap = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> zbuf(zcap);
    if (compress2(zbuf.data(), &zcap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw data_error("export_png: deflate failed for " + path.string());
    zbuf.resize(zcap);

    std::vector<unsigned char> out;
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.insert(out.end(), sig, sig + 8);
    unsigned char ihdr[13] = {
        (unsigned char)((w >> 24) & 0xff), (unsigned char)((w >> 16) & 0xff),
        (unsigned char)((w >> 8) & 0xff),  (unsigned char)(w & 0xff),
        (unsigned char)((h >> 24) & 0xff), (unsigned char)((h >> 16) & 0xff),
        (unsigned char)((h >> 8) & 0xff),  (unsigned char)(h & 0xff),
        8,  // bit depth
        2,  // color type RGB
        0, 0, 0};
    png_chunk(out, "IHDR", ihdr, 13);
    png_chunk(out, "IDAT", zbuf.data(), zbuf.size());
    png_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("export_png: cannot open " + path.string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw data_error("export_png: write failed for " + path.string());
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open for write: " + path.string());
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw data_error("write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace monetlab::store
