#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "monetlab/rng.hpp"
#include "monetlab/synthdata.hpp"
#include "monetlab/tensor.hpp"

namespace monetlab::pipeline {

constexpr int kChannels = 6;  // brightfield + 5 paint

// Dataset-level clip bounds per channel (channel 0 = brightfield). Paint
// channels use the 1/99 percentiles, brightfield 2/98, nearest-rank.
struct PercentileStats {
    std::array<float, kChannels> lo{};
    std::array<float, kChannels> hi{};

    void validate() const;
    std::string to_json() const;
    static PercentileStats from_json(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static PercentileStats load(const std::filesystem::path& path);
};

// Nearest-rank percentile of the pooled values: rank = ceil(p/100 * n) into
// the ascending order, 1-based. `values` is consumed (reordered in place).
float nearest_rank_percentile(std::vector<float>& values, double p);

// Pools every pixel of one channel across the given scenes of a dataset.
// Channel 0 is brightfield (p = 2/98), 1..5 paint (p = 1/99).
std::pair<float, float> compute_percentiles(const std::filesystem::path& root,
                                            const std::vector<std::string>& ids, int channel);

PercentileStats compute_stats(const std::filesystem::path& root,
                              const std::vector<std::string>& ids);

// 6 planes in [-1,1]: clip to [lo,hi] -> [0,1] -> sqrt -> [-1,1].
struct NormalizedStack {
    int height = 0, width = 0;
    std::vector<float> data;  // kChannels * height * width

    float* plane(int c) { return data.data() + size_t(c) * height * width; }
    const float* plane(int c) const { return data.data() + size_t(c) * height * width; }
};

NormalizedStack preprocess(const synth::StainStack& stack, const PercentileStats& stats);
synth::StainStack postprocess(const NormalizedStack& norm, const PercentileStats& stats);

// Deterministic augmentation parameters; identity by default.
struct AugmentParams {
    int rot_quarters = 0;   // k * 90 degrees, exact
    bool flip_h = false;
    double zoom = 1.0;      // in [0.8, 1.25]
    bool center_resize = false;  // false: random crop at (off_x, off_y)
    int off_x = 0, off_y = 0;
};

AugmentParams sample_augment(Rng& rng, int src_size, int out_size);
NormalizedStack apply_augment(const NormalizedStack& in, const AugmentParams& p, int out_size);
inline NormalizedStack augment(const NormalizedStack& in, Rng& rng, int out_size) {
    return apply_augment(in, sample_augment(rng, in.height, out_size), out_size);
}

// Model input pair: independently augmented target and reference views of the
// same stack; the reference is zeroed for 10% of draws.
struct PairedExample {
    NormalizedStack target;
    NormalizedStack reference;  // all-zero planes when reference_present is false
    bool reference_present = true;
};

constexpr double kReferenceDropout = 0.1;

PairedExample make_training_pair(const NormalizedStack& norm, Rng& rng, int out_size);

}  // namespace monetlab::pipeline
