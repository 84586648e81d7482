#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "monetlab/model.hpp"

using namespace monetlab;
using namespace monetlab::model;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.base_width = 4;
    cfg.group_count = 2;
    cfg.attention_heads = 2;
    cfg.time_embed_dim = 8;
    return cfg;
}

template <typename T>
std::vector<T> randn(size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<T> v(n);
    for (auto& x : v) x = T(rng.normal() * scale);
    return v;
}

}  // namespace

TEST_CASE("init_params is deterministic and zero-initializes the head") {
    auto cfg = ModelConfig::for_tier('S');
    auto a = init_params(cfg, 42);
    auto b = init_params(cfg, 42);
    CHECK(a == b);
    auto c = init_params(cfg, 43);
    CHECK(a != c);

    UNet net(cfg);
    const auto& hw = net.layout().spec("head.w");
    const auto& hb = net.layout().spec("head.b");
    for (size_t i = 0; i < hw.size; ++i) CHECK(a[hw.offset + i] == 0.f);
    for (size_t i = 0; i < hb.size; ++i) CHECK(a[hb.offset + i] == 0.f);
    // normalization gains are 1
    const auto& g = net.layout().spec("enc1.gn1.g");
    for (size_t i = 0; i < g.size; ++i) CHECK(a[g.offset + i] == 1.f);
}

TEST_CASE("count_params equals realized tensors and grows strictly S < M < L") {
    size_t counts[3];
    int i = 0;
    for (char tier : {'S', 'M', 'L'}) {
        auto cfg = ModelConfig::for_tier(tier);
        counts[i] = count_params(cfg);
        CHECK(counts[i] == init_params(cfg, 1).size());
        // independent enumeration of the layout
        size_t total = 0;
        for (const auto& ts : build_layout(cfg).tensors) {
            size_t n = 1;
            for (uint32_t d : ts.dims) n *= d;
            total += n;
        }
        CHECK(total == counts[i]);
        ++i;
    }
    CHECK(counts[0] < counts[1]);
    CHECK(counts[1] < counts[2]);
}

TEST_CASE("doubling the width roughly quadruples conv weight count") {
    auto cfg16 = ModelConfig::for_tier('S');   // w=16
    auto cfg32 = ModelConfig::for_tier('M');   // w=32
    auto conv_weights = [](const ModelConfig& c) {
        size_t total = 0;
        for (const auto& ts : build_layout(c).tensors)
            if (ts.dims.size() == 4) total += ts.size;
        return total;
    };
    const double ratio = double(conv_weights(cfg32)) / double(conv_weights(cfg16));
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.2);
}

TEST_CASE("config validation rejects bad shapes") {
    ModelConfig cfg;
    cfg.base_width = 10;  // not a multiple of group_count 8
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ModelConfig{};
    cfg.attention_heads = 7;  // does not divide 4w = 64
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ModelConfig{};
    cfg.tier = 'X';
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("freshly initialized model is the exact zero velocity field") {
    auto cfg = tiny_config();
    UNet net(cfg);
    auto params = init_params(cfg, 7);
    Workspace<float> ws;
    net.alloc_workspace(ws, 16, 16);
    auto input = randn<float>(12 * 16 * 16, 3);
    std::vector<float> out(5 * 16 * 16, 1.f);
    net.forward(params.data(), input.data(), 0.3f, ws, out.data());
    for (float v : out) CHECK(v == 0.f);
}

TEST_CASE("output spatial dims follow input dims") {
    auto cfg = tiny_config();
    UNet net(cfg);
    auto params = randn<float>(net.param_count(), 5, 0.05);
    for (auto [h, w] : {std::pair{64, 64}, std::pair{32, 48}, std::pair{16, 8}}) {
        Workspace<float> ws;
        net.alloc_workspace(ws, h, w);
        auto input = randn<float>(size_t(12) * h * w, 9);
        std::vector<float> out(size_t(5) * h * w);
        net.forward(params.data(), input.data(), 0.5f, ws, out.data());
        for (float v : out) CHECK(std::isfinite(v));
    }
    Workspace<float> ws;
    CHECK_THROWS_AS(net.alloc_workspace(ws, 10, 10), Error);  // not divisible by 4
}

TEST_CASE("attention gives a global receptive field at the bottleneck") {
    auto cfg = tiny_config();
    UNet net(cfg);
    auto params = randn<float>(net.param_count(), 21, 0.1);
    const int h = 16, w = 16;
    Workspace<float> ws;
    net.alloc_workspace(ws, h, w);
    auto input = randn<float>(size_t(12) * h * w, 22);
    std::vector<float> out_a(size_t(5) * h * w), out_b(size_t(5) * h * w);
    net.forward(params.data(), input.data(), 0.5f, ws, out_a.data());
    input[0] += 2.f;  // corner pixel of channel 0
    net.forward(params.data(), input.data(), 0.5f, ws, out_b.data());
    // the far corner must react
    const size_t far = size_t(4) * h * w + size_t(h - 1) * w + (w - 1);
    CHECK(out_a[far] != out_b[far]);
}

TEST_CASE("zero reference planes equal absent reference by construction") {
    // the 12-channel contract has no separate no-reference path: zeroed
    // planes ARE the absent reference, so outputs agree bit for bit
    auto cfg = tiny_config();
    UNet net(cfg);
    auto params = randn<float>(net.param_count(), 31, 0.1);
    const int h = 8, w = 8;
    Workspace<float> ws;
    net.alloc_workspace(ws, h, w);
    auto input = randn<float>(size_t(12) * h * w, 32);
    std::fill(input.begin() + 6 * h * w, input.end(), 0.f);
    std::vector<float> out_a(size_t(5) * h * w), out_b(size_t(5) * h * w);
    net.forward(params.data(), input.data(), 0.5f, ws, out_a.data());
    net.forward(params.data(), input.data(), 0.5f, ws, out_b.data());
    CHECK(out_a == out_b);
}

TEST_CASE("gradients are bit-deterministic") {
    auto cfg = tiny_config();
    UNet net(cfg);
    auto params = randn<float>(net.param_count(), 41, 0.1);
    const int h = 8, w = 8;
    Workspace<float> ws;
    net.alloc_workspace(ws, h, w);
    auto input = randn<float>(size_t(12) * h * w, 42);
    auto gout = randn<float>(size_t(5) * h * w, 43);
    std::vector<float> out(size_t(5) * h * w);
    std::vector<float> g1(net.param_count(), 0.f), g2(net.param_count(), 0.f);
    net.forward(params.data(), input.data(), 0.4f, ws, out.data());
    net.backward(params.data(), ws, gout.data(), g1.data());
    net.forward(params.data(), input.data(), 0.4f, ws, out.data());
    net.backward(params.data(), ws, gout.data(), g2.data());
    CHECK(g1 == g2);
}

TEST_CASE("attention sublayer commutes with spatial permutations") {
    auto cfg = tiny_config();
    UNet net(cfg);
    const int h = 8, w = 8, n = (h / 4) * (w / 4);
    const int c4 = cfg.width(2);
    auto params = randn<float>(net.param_count(), 51, 0.2);
    Workspace<float> ws;
    net.alloc_workspace(ws, h, w);

    auto x = randn<float>(size_t(c4) * n, 52);
    // permutation of the bottleneck positions
    std::vector<int> perm(size_t(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(53);
    for (int i = n - 1; i > 0; --i) std::swap(perm[size_t(i)], perm[rng.below(uint64_t(i + 1))]);

    std::copy(x.begin(), x.end(), ws.mid1.out.begin());
    net.attention_sublayer(params.data(), ws, n);
    std::vector<float> y = {ws.att_out.begin(), ws.att_out.end()};

    std::vector<float> xp(x.size());
    for (int c = 0; c < c4; ++c)
        for (int p = 0; p < n; ++p)
            xp[size_t(c) * n + perm[size_t(p)]] = x[size_t(c) * n + p];
    std::copy(xp.begin(), xp.end(), ws.mid1.out.begin());
    net.attention_sublayer(params.data(), ws, n);

    for (int c = 0; c < c4; ++c)
        for (int p = 0; p < n; ++p) {
            const float yp = ws.att_out[size_t(c) * n + perm[size_t(p)]];
            CHECK(std::abs(yp - y[size_t(c) * n + p]) < 2e-5);
        }
}

// Full-model gradient check. The float32 analytic gradient is compared
// against a float64 finite-difference oracle (eps = 1e-3); errors are
// measured relative to the gradient scale.
TEST_CASE("full-model finite-difference gradient check") {
    auto cfg = tiny_config();
    UNet net(cfg);
    const int h = 8, w = 8;
    const size_t n_out = size_t(5) * h * w;

    auto params_d = randn<double>(net.param_count(), 61, 0.1);
    auto input_d = randn<double>(size_t(12) * h * w, 62);
    auto target_d = randn<double>(n_out, 63);
    const double t = 0.37;

    Workspace<double> wsd;
    net.alloc_workspace(wsd, h, w);
    std::vector<double> out_d(n_out);
    auto loss_d = [&] {
        net.forward(params_d.data(), input_d.data(), t, wsd, out_d.data());
        double L = 0;
        for (size_t i = 0; i < n_out; ++i) {
            const double d = out_d[i] - target_d[i];
            L += d * d;
        }
        return L / double(n_out);
    };

    // analytic gradient from the float32 path
    std::vector<float> params_f(params_d.begin(), params_d.end());
    std::vector<float> input_f(input_d.begin(), input_d.end());
    Workspace<float> wsf;
    net.alloc_workspace(wsf, h, w);
    std::vector<float> out_f(n_out), gout_f(n_out);
    net.forward(params_f.data(), input_f.data(), float(t), wsf, out_f.data());
    for (size_t i = 0; i < n_out; ++i)
        gout_f[i] = float(2.0 * (double(out_f[i]) - target_d[i]) / double(n_out));
    std::vector<float> grads_f(net.param_count(), 0.f);
    net.backward(params_f.data(), wsf, gout_f.data(), grads_f.data());

    // and from the float64 path (for the tight double-vs-double check)
    std::vector<double> gout_d(n_out);
    loss_d();
    for (size_t i = 0; i < n_out; ++i) gout_d[i] = 2.0 * (out_d[i] - target_d[i]) / double(n_out);
    std::vector<double> grads_d(net.param_count(), 0.0);
    net.backward(params_d.data(), wsd, gout_d.data(), grads_d.data());

    double gmax = 1e-12;
    for (double g : grads_d) gmax = std::max(gmax, std::abs(g));

    Rng pick(64);
    double worst_f = 0, worst_d = 0;
    for (const auto& ts : net.layout().tensors) {
        for (int rep = 0; rep < 2; ++rep) {
            const size_t i = ts.offset + pick.below(ts.size);
            const double eps = 1e-3;
            const double keep = params_d[i];
            params_d[i] = keep + eps;
            const double lp = loss_d();
            params_d[i] = keep - eps;
            const double lm = loss_d();
            params_d[i] = keep;
            const double fd = (lp - lm) / (2 * eps);
            const double denom_f =
                std::max({std::abs(fd), std::abs(double(grads_f[i])), 1e-3 * gmax});
            const double denom_d = std::max({std::abs(fd), std::abs(grads_d[i]), 1e-3 * gmax});
            worst_f = std::max(worst_f, std::abs(fd - double(grads_f[i])) / denom_f);
            worst_d = std::max(worst_d, std::abs(fd - grads_d[i]) / denom_d);
        }
    }
    CHECK(worst_f < 1e-3);  // 32-bit analytic vs 64-bit oracle
    CHECK(worst_d < 1e-6);  // 64-bit analytic vs 64-bit oracle
}

TEST_CASE("time embedding responds to t") {
    auto cfg = tiny_config();
    UNet net(cfg);
    auto params = randn<float>(net.param_count(), 71, 0.1);
    const int h = 8, w = 8;
    Workspace<float> ws;
    net.alloc_workspace(ws, h, w);
    auto input = randn<float>(size_t(12) * h * w, 72);
    std::vector<float> out_a(size_t(5) * h * w), out_b(size_t(5) * h * w);
    net.forward(params.data(), input.data(), 0.1f, ws, out_a.data());
    net.forward(params.data(), input.data(), 0.9f, ws, out_b.data());
    CHECK(out_a != out_b);
}
