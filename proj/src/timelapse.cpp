#include "monetlab/timelapse.hpp"

#include <cmath>

#include "monetlab/common.hpp"

namespace monetlab::timelapse {

std::vector<std::vector<float>> generate_consistent(const model::UNet& net,
                                                    const std::vector<float>& params,
                                                    const std::vector<std::vector<float>>& bf_frames,
                                                    int h, int w, int steps, uint64_t seed,
                                                    bool chain_previous) {
    if (bf_frames.empty()) throw usage_error("generate_consistent: no frames");
    const size_t n = size_t(h) * w;
    std::vector<std::vector<float>> out(bf_frames.size());

    Rng rng0 = Rng::split(seed, 0);
    out[0] = diffusion::sample(net, params, bf_frames[0].data(), nullptr, h, w, steps, rng0);

    if (chain_previous) {
        // experimental previous-frame chaining; sequential by construction
        for (size_t i = 1; i < bf_frames.size(); ++i) {
            std::vector<float> ref(6 * n);
            std::copy(bf_frames[i - 1].begin(), bf_frames[i - 1].end(), ref.begin());
            std::copy(out[i - 1].begin(), out[i - 1].end(), ref.begin() + long(n));
            Rng rng = Rng::split(seed, uint64_t(i));
            out[i] = diffusion::sample(net, params, bf_frames[i].data(), ref.data(), h, w, steps, rng);
        }
        return out;
    }

    // later frames depend only on frame 0 and may run concurrently
    std::vector<float> ref(6 * n);
    std::copy(bf_frames[0].begin(), bf_frames[0].end(), ref.begin());
    std::copy(out[0].begin(), out[0].end(), ref.begin() + long(n));
#pragma omp parallel for schedule(dynamic)
    for (long long i = 1; i < (long long)bf_frames.size(); ++i) {
        Rng rng = Rng::split(seed, uint64_t(i));
        out[size_t(i)] =
            diffusion::sample(net, params, bf_frames[size_t(i)].data(), ref.data(), h, w, steps, rng);
    }
    return out;
}

std::vector<std::vector<float>> generate_independent(const model::UNet& net,
                                                     const std::vector<float>& params,
                                                     const std::vector<std::vector<float>>& bf_frames,
                                                     int h, int w, int steps, uint64_t seed) {
    if (bf_frames.empty()) throw usage_error("generate_independent: no frames");
    std::vector<std::vector<float>> out(bf_frames.size());
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < (long long)bf_frames.size(); ++i) {
        Rng rng = Rng::split(seed, uint64_t(i));
        out[size_t(i)] =
            diffusion::sample(net, params, bf_frames[size_t(i)].data(), nullptr, h, w, steps, rng);
    }
    return out;
}

FrameMse frame_mse(const std::vector<std::vector<float>>& paint_frames, int h, int w) {
    if (paint_frames.size() < 2)
        throw usage_error("frame_mse: need at least 2 frames");
    const size_t n5 = 5 * size_t(h) * w;
    FrameMse r;
    double acc = 0.0;
    for (size_t i = 0; i + 1 < paint_frames.size(); ++i) {
        if (paint_frames[i].size() != n5 || paint_frames[i + 1].size() != n5)
            throw data_error("frame_mse: frame size mismatch");
        double s = 0.0;
        for (size_t j = 0; j < n5; ++j) {
            const double d = double(paint_frames[i][j]) - double(paint_frames[i + 1][j]);
            s += d * d;
        }
        r.per_pair.push_back(s / double(n5));
        acc += r.per_pair.back();
    }
    r.mean = acc / double(r.per_pair.size());
    return r;
}

CorpusMse corpus_mse(const std::vector<FrameMse>& sequences) {
    CorpusMse c;
    for (const auto& s : sequences) c.per_sequence.push_back(s.mean);
    if (c.per_sequence.empty()) return c;
    double sum = 0.0;
    for (double v : c.per_sequence) sum += v;
    c.mean = sum / double(c.per_sequence.size());
    if (c.per_sequence.size() > 1) {
        double sq = 0.0;
        for (double v : c.per_sequence) sq += (v - c.mean) * (v - c.mean);
        const double var = sq / double(c.per_sequence.size() - 1);
        c.stderr_mean = std::sqrt(var / double(c.per_sequence.size()));
    }
    return c;
}

}  // namespace monetlab::timelapse
