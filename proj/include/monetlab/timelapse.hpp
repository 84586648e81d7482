#pragma once

#include <vector>

#include "monetlab/diffusion.hpp"

namespace monetlab::timelapse {

// Reference-consistent video generation. Frame 0 is sampled without a
// reference; every later frame conditions on (brightfield, generated paint)
// of frame 0. Frames use independent noise streams derived by seed-splitting,
// so consistency can only come from the conditioning.
std::vector<std::vector<float>> generate_consistent(const model::UNet& net,
                                                    const std::vector<float>& params,
                                                    const std::vector<std::vector<float>>& bf_frames,
                                                    int h, int w, int steps, uint64_t seed,
                                                    bool chain_previous = false);

// Baseline: each frame sampled independently with no reference.
std::vector<std::vector<float>> generate_independent(const model::UNet& net,
                                                     const std::vector<float>& params,
                                                     const std::vector<std::vector<float>>& bf_frames,
                                                     int h, int w, int steps, uint64_t seed);

// Mean squared difference of each adjacent frame pair, averaged over pixels
// and the 5 channels; `mean` over the sequence.
struct FrameMse {
    std::vector<double> per_pair;
    double mean = 0.0;
};

FrameMse frame_mse(const std::vector<std::vector<float>>& paint_frames, int h, int w);

// Corpus summary over sequences: per-sequence means plus their mean and the
// standard error across sequences.
struct CorpusMse {
    std::vector<double> per_sequence;
    double mean = 0.0;
    double stderr_mean = 0.0;
};

CorpusMse corpus_mse(const std::vector<FrameMse>& sequences);

}  // namespace monetlab::timelapse
