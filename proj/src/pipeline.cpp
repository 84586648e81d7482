#include "monetlab/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "monetlab/common.hpp"
#include "monetlab/store.hpp"

namespace monetlab::pipeline {

using nlohmann::json;

static const char* kChannelNames[kChannels] = {"brightfield", "dna", "rna", "er", "agp", "mito"};

void PercentileStats::validate() const {
    for (int c = 0; c < kChannels; ++c) {
        if (!(lo[size_t(c)] < hi[size_t(c)]))
            throw data_error(std::string("degenerate channel '") + kChannelNames[c] +
                             "': lo >= hi");
    }
}

std::string PercentileStats::to_json() const {
    json j;
    for (int c = 0; c < kChannels; ++c)
        j[kChannelNames[c]] = json::array({lo[size_t(c)], hi[size_t(c)]});
    j["method"] = "nearest-rank";
    return j.dump(2) + "\n";
}

PercentileStats PercentileStats::from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.value("method", "") != "nearest-rank")
        throw data_error("percentile stats: unknown method field");
    PercentileStats s;
    for (int c = 0; c < kChannels; ++c) {
        const auto& a = j.at(kChannelNames[c]);
        s.lo[size_t(c)] = a.at(0).get<float>();
        s.hi[size_t(c)] = a.at(1).get<float>();
    }
    s.validate();
    return s;
}

void PercentileStats::save(const std::filesystem::path& path) const {
    store::write_text_file(path, to_json());
}

PercentileStats PercentileStats::load(const std::filesystem::path& path) {
    return from_json(store::read_text_file(path));
}

float nearest_rank_percentile(std::vector<float>& values, double p) {
    if (values.empty()) throw data_error("percentile of empty pool");
    const size_t n = values.size();
    size_t rank = size_t(std::ceil(p / 100.0 * double(n)));
    rank = std::clamp<size_t>(rank, 1, n);
    std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
    return values[rank - 1];
}

std::pair<float, float> compute_percentiles(const std::filesystem::path& root,
                                            const std::vector<std::string>& ids, int channel) {
    if (ids.empty()) throw data_error("compute_percentiles: empty dataset");
    if (channel < 0 || channel >= kChannels)
        throw usage_error("compute_percentiles: channel out of range");
    std::vector<float> pool;
    for (const auto& id : ids) {
        synth::StainStack s = synth::load_stack(root, id);
        const size_t n = size_t(s.height) * s.width;
        const float* src =
            channel == 0 ? s.brightfield.data() : s.paint.data() + size_t(channel - 1) * n;
        pool.insert(pool.end(), src, src + n);
    }
    if (pool.size() < 100)
        throw data_error("compute_percentiles: channel pool has fewer than 100 pixels");
    const double plo = channel == 0 ? 2.0 : 1.0;
    const double phi = channel == 0 ? 98.0 : 99.0;
    std::vector<float> pool2 = pool;
    float lo = nearest_rank_percentile(pool, plo);
    float hi = nearest_rank_percentile(pool2, phi);
    if (!(lo < hi))
        throw data_error(std::string("degenerate channel '") + kChannelNames[channel] +
                         "': percentile bounds collapsed");
    return {lo, hi};
}

PercentileStats compute_stats(const std::filesystem::path& root,
                              const std::vector<std::string>& ids) {
    PercentileStats s;
    for (int c = 0; c < kChannels; ++c) {
        auto [lo, hi] = compute_percentiles(root, ids, c);
        s.lo[size_t(c)] = lo;
        s.hi[size_t(c)] = hi;
    }
    return s;
}

NormalizedStack preprocess(const synth::StainStack& stack, const PercentileStats& stats) {
    stats.validate();
    NormalizedStack out;
    out.height = stack.height;
    out.width = stack.width;
    const size_t n = size_t(stack.height) * stack.width;
    out.data.resize(size_t(kChannels) * n);
    for (int c = 0; c < kChannels; ++c) {
        const float lo = stats.lo[size_t(c)], hi = stats.hi[size_t(c)];
        const float inv = 1.f / (hi - lo);
        const float* src =
            c == 0 ? stack.brightfield.data() : stack.paint.data() + size_t(c - 1) * n;
        float* dst = out.plane(c);
        for (size_t i = 0; i < n; ++i) {
            const float v = src[i];
            if (!std::isfinite(v))
                throw data_error(std::string("preprocess: non-finite pixel in channel '") +
                                 kChannelNames[c] + "'");
            const float clipped = std::clamp(v, lo, hi);
            dst[i] = 2.f * std::sqrt((clipped - lo) * inv) - 1.f;
        }
    }
    return out;
}

synth::StainStack postprocess(const NormalizedStack& norm, const PercentileStats& stats) {
    stats.validate();
    synth::StainStack out;
    out.height = norm.height;
    out.width = norm.width;
    const size_t n = size_t(norm.height) * norm.width;
    out.brightfield.resize(n);
    out.paint.resize(size_t(synth::kPaintChannels) * n);
    for (int c = 0; c < kChannels; ++c) {
        const float lo = stats.lo[size_t(c)], hi = stats.hi[size_t(c)];
        const float* src = norm.plane(c);
        float* dst = c == 0 ? out.brightfield.data() : out.paint.data() + size_t(c - 1) * n;
        for (size_t i = 0; i < n; ++i) {
            const float y = std::clamp(src[i], -1.f, 1.f);
            const float s = (y + 1.f) * 0.5f;
            dst[i] = lo + s * s * (hi - lo);
        }
    }
    return out;
}

// --- augmentation ------------------------------------------------------------

AugmentParams sample_augment(Rng& rng, int src_size, int out_size) {
    AugmentParams p;
    p.rot_quarters = int(rng.below(4));
    p.flip_h = rng.below(2) == 1;
    p.zoom = rng.uniform(0.8, 1.25);
    const int zoomed = std::max(1, int(std::lround(src_size * p.zoom)));
    p.center_resize = rng.below(2) == 1;
    if (zoomed < out_size) p.center_resize = true;
    if (!p.center_resize) {
        p.off_x = int(rng.below(uint64_t(zoomed - out_size + 1)));
        p.off_y = int(rng.below(uint64_t(zoomed - out_size + 1)));
    }
    return p;
}

static void rot_flip_plane(const float* src, int size, int rot, bool flip, float* dst) {
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            int sx = x, sy = y;
            switch (rot & 3) {
                case 0: break;
                case 1:  // 90 degrees counterclockwise
                    sx = size - 1 - y;
                    sy = x;
                    break;
                case 2:
                    sx = size - 1 - x;
                    sy = size - 1 - y;
                    break;
                case 3:
                    sx = y;
                    sy = size - 1 - x;
                    break;
            }
            if (flip) sx = size - 1 - sx;
            dst[size_t(y) * size + x] = src[size_t(sy) * size + sx];
        }
    }
}

// bilinear resample src_size -> dst_size with pixel-center mapping; exact
// identity when the sizes match
static void resize_plane(const float* src, int src_size, float* dst, int dst_size) {
    if (src_size == dst_size) {
        std::copy(src, src + size_t(src_size) * src_size, dst);
        return;
    }
    const float scale = float(src_size) / float(dst_size);
    for (int y = 0; y < dst_size; ++y) {
        float fy = (float(y) + 0.5f) * scale - 0.5f;
        fy = std::clamp(fy, 0.f, float(src_size - 1));
        const int y0 = int(fy);
        const int y1 = std::min(y0 + 1, src_size - 1);
        const float ty = fy - float(y0);
        for (int x = 0; x < dst_size; ++x) {
            float fx = (float(x) + 0.5f) * scale - 0.5f;
            fx = std::clamp(fx, 0.f, float(src_size - 1));
            const int x0 = int(fx);
            const int x1 = std::min(x0 + 1, src_size - 1);
            const float tx = fx - float(x0);
            const float v00 = src[size_t(y0) * src_size + x0];
            const float v10 = src[size_t(y0) * src_size + x1];
            const float v01 = src[size_t(y1) * src_size + x0];
            const float v11 = src[size_t(y1) * src_size + x1];
            dst[size_t(y) * dst_size + x] =
                (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
        }
    }
}

NormalizedStack apply_augment(const NormalizedStack& in, const AugmentParams& p, int out_size) {
    if (in.height != in.width) throw data_error("augment: input must be square");
    const int src = in.height;
    const int zoomed = std::max(1, int(std::lround(src * p.zoom)));

    NormalizedStack out;
    out.height = out.width = out_size;
    out.data.resize(size_t(kChannels) * out_size * out_size);

    std::vector<float> rot(size_t(src) * src), zoom(size_t(zoomed) * zoomed);
    for (int c = 0; c < kChannels; ++c) {
        rot_flip_plane(in.plane(c), src, p.rot_quarters, p.flip_h, rot.data());
        resize_plane(rot.data(), src, zoom.data(), zoomed);
        float* dst = out.plane(c);
        if (p.center_resize) {
            resize_plane(zoom.data(), zoomed, dst, out_size);
        } else {
            if (p.off_x < 0 || p.off_y < 0 || p.off_x + out_size > zoomed ||
                p.off_y + out_size > zoomed)
                throw data_error("augment: crop offset out of bounds");
            for (int y = 0; y < out_size; ++y)
                std::copy(zoom.data() + size_t(y + p.off_y) * zoomed + p.off_x,
                          zoom.data() + size_t(y + p.off_y) * zoomed + p.off_x + out_size,
                          dst + size_t(y) * out_size);
        }
    }
    return out;
}

PairedExample make_training_pair(const NormalizedStack& norm, Rng& rng, int out_size) {
    PairedExample ex;
    ex.target = augment(norm, rng, out_size);
    const bool drop = rng.uniform() < kReferenceDropout;
    if (drop) {
        ex.reference.height = ex.reference.width = out_size;
        ex.reference.data.assign(size_t(kChannels) * out_size * out_size, 0.f);
        ex.reference_present = false;
    } else {
        ex.reference = augment(norm, rng, out_size);
        ex.reference_present = true;
    }
    return ex;
}

}  // namespace monetlab::pipeline
