#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "monetlab/kernels.hpp"
#include "monetlab/rng.hpp"

using namespace monetlab;
namespace K = monetlab::kernels;

namespace {

std::vector<float> randf(size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = float(rng.normal() * scale);
    return v;
}

std::vector<double> randd(size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * scale;
    return v;
}

double max_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double scale = 1e-6;
    for (size_t i = 0; i < a.size(); ++i)
        scale = std::max({scale, std::abs(double(a[i])), std::abs(double(b[i]))});
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / scale);
    return worst;
}

// shapes straddle the direct-vs-lowered conv threshold
struct Shape {
    int ci, co, h, w, stride;
};
const Shape kShapes[] = {
    {3, 5, 8, 8, 1},    {16, 16, 64, 64, 1}, {7, 9, 12, 16, 1},  {16, 32, 64, 64, 2},
    {8, 8, 16, 16, 2},  {32, 16, 64, 64, 1}, {5, 7, 48, 48, 1},
};

}  // namespace

TEST_CASE("conv3x3 forward: omp matches serial reference") {
    for (const auto& s : kShapes) {
        auto in = randf(size_t(s.ci) * s.h * s.w, 1);
        auto wt = randf(size_t(s.co) * s.ci * 9, 2);
        auto bias = randf(size_t(s.co), 3);
        const int n = (s.h / s.stride) * (s.w / s.stride);
        std::vector<float> a(size_t(s.co) * n), b(size_t(s.co) * n);
        K::ref::conv3x3_fwd(in.data(), s.ci, s.h, s.w, wt.data(), bias.data(), a.data(), s.co,
                            s.stride);
        K::conv3x3_fwd(in.data(), s.ci, s.h, s.w, wt.data(), bias.data(), b.data(), s.co,
                       s.stride);
        CHECK(max_rel_diff(a, b) < 1e-5);
    }
}

TEST_CASE("conv3x3 backward data: omp matches reference") {
    for (const auto& s : kShapes) {
        const int n = (s.h / s.stride) * (s.w / s.stride);
        auto gout = randf(size_t(s.co) * n, 4);
        auto wt = randf(size_t(s.co) * s.ci * 9, 5);
        std::vector<float> a(size_t(s.ci) * s.h * s.w), b(size_t(s.ci) * s.h * s.w);
        K::ref::conv3x3_bwd_data(gout.data(), s.co, s.h, s.w, wt.data(), a.data(), s.ci, s.stride);
        K::conv3x3_bwd_data(gout.data(), s.co, s.h, s.w, wt.data(), b.data(), s.ci, s.stride);
        CHECK(max_rel_diff(a, b) < 1e-5);
    }
}

TEST_CASE("conv3x3 backward weights: omp matches reference") {
    for (const auto& s : kShapes) {
        const int n = (s.h / s.stride) * (s.w / s.stride);
        auto gout = randf(size_t(s.co) * n, 6);
        auto in = randf(size_t(s.ci) * s.h * s.w, 7);
        std::vector<float> gw_a(size_t(s.co) * s.ci * 9), gb_a(size_t(s.co));
        std::vector<float> gw_b = gw_a, gb_b = gb_a;
        K::ref::conv3x3_bwd_wb(gout.data(), s.co, in.data(), s.ci, s.h, s.w, gw_a.data(),
                               gb_a.data(), s.stride);
        K::conv3x3_bwd_wb(gout.data(), s.co, in.data(), s.ci, s.h, s.w, gw_b.data(), gb_b.data(),
                          s.stride);
        CHECK(max_rel_diff(gw_a, gw_b) < 1e-5);
        CHECK(max_rel_diff(gb_a, gb_b) < 1e-5);
    }
}

TEST_CASE("optimized kernels are deterministic across repeated calls") {
    const Shape s{16, 16, 64, 64, 1};
    auto in = randf(size_t(s.ci) * s.h * s.w, 8);
    auto wt = randf(size_t(s.co) * s.ci * 9, 9);
    auto bias = randf(size_t(s.co), 10);
    std::vector<float> a(size_t(s.co) * s.h * s.w), b(size_t(s.co) * s.h * s.w);
    K::conv3x3_fwd(in.data(), s.ci, s.h, s.w, wt.data(), bias.data(), a.data(), s.co, 1);
    K::conv3x3_fwd(in.data(), s.ci, s.h, s.w, wt.data(), bias.data(), b.data(), s.co, 1);
    CHECK(a == b);
}

TEST_CASE("conv1x1, groupnorm, silu, softmax, gemm, upsample: omp vs reference") {
    const int c = 24, n = 640, groups = 8;
    auto x = randf(size_t(c) * n, 11);
    auto w1 = randf(size_t(c) * c, 12);
    auto bias = randf(size_t(c), 13);
    {
        std::vector<float> a(size_t(c) * n), b(size_t(c) * n);
        K::ref::conv1x1_fwd(x.data(), c, n, w1.data(), bias.data(), a.data(), c);
        K::conv1x1_fwd(x.data(), c, n, w1.data(), bias.data(), b.data(), c);
        CHECK(max_rel_diff(a, b) < 1e-5);
        std::vector<float> ga(size_t(c) * n), gb(size_t(c) * n);
        K::ref::conv1x1_bwd_data(x.data(), c, n, w1.data(), ga.data(), c);
        K::conv1x1_bwd_data(x.data(), c, n, w1.data(), gb.data(), c);
        CHECK(max_rel_diff(ga, gb) < 1e-5);
        std::vector<float> gwa(size_t(c) * c), gba(size_t(c)), gwb(size_t(c) * c), gbb(size_t(c));
        K::ref::conv1x1_bwd_wb(x.data(), c, x.data(), c, n, gwa.data(), gba.data());
        K::conv1x1_bwd_wb(x.data(), c, x.data(), c, n, gwb.data(), gbb.data());
        CHECK(max_rel_diff(gwa, gwb) < 1e-5);
    }
    {
        auto gamma = randf(size_t(c), 14);
        auto beta = randf(size_t(c), 15);
        std::vector<float> ya(size_t(c) * n), yb(size_t(c) * n), ma(groups), sa(groups),
            mb(groups), sb(groups);
        K::ref::groupnorm_fwd(x.data(), c, n, groups, 1e-5f, gamma.data(), beta.data(), ya.data(),
                              ma.data(), sa.data());
        K::groupnorm_fwd(x.data(), c, n, groups, 1e-5f, gamma.data(), beta.data(), yb.data(),
                         mb.data(), sb.data());
        CHECK(max_rel_diff(ya, yb) < 1e-5);
        auto gy = randf(size_t(c) * n, 16);
        std::vector<float> gxa(size_t(c) * n), gga(size_t(c)), gba2(size_t(c));
        std::vector<float> gxb(size_t(c) * n), ggb(size_t(c)), gbb2(size_t(c));
        K::ref::groupnorm_bwd(gy.data(), x.data(), c, n, groups, gamma.data(), ma.data(),
                              sa.data(), gxa.data(), gga.data(), gba2.data());
        K::groupnorm_bwd(gy.data(), x.data(), c, n, groups, gamma.data(), mb.data(), sb.data(),
                         gxb.data(), ggb.data(), gbb2.data());
        CHECK(max_rel_diff(gxa, gxb) < 1e-5);
        CHECK(max_rel_diff(gga, ggb) < 1e-5);
    }
    {
        std::vector<float> a(x.size()), b(x.size());
        K::ref::silu_fwd(x.data(), a.data(), x.size());
        K::silu_fwd(x.data(), b.data(), x.size());
        CHECK(max_rel_diff(a, b) < 1e-6);
        auto gy = randf(x.size(), 17);
        K::ref::silu_bwd(gy.data(), x.data(), a.data(), x.size());
        K::silu_bwd(gy.data(), x.data(), b.data(), x.size());
        CHECK(max_rel_diff(a, b) < 1e-6);
    }
    {
        const int rows = 64, cols = 96;
        auto s = randf(size_t(rows) * cols, 18);
        std::vector<float> pa(s.size()), pb(s.size());
        K::ref::softmax_rows(s.data(), pa.data(), rows, cols);
        K::softmax_rows(s.data(), pb.data(), rows, cols);
        CHECK(max_rel_diff(pa, pb) < 1e-5);
        auto gp = randf(s.size(), 19);
        std::vector<float> ga(s.size()), gb(s.size());
        K::ref::softmax_rows_bwd(gp.data(), pa.data(), ga.data(), rows, cols);
        K::softmax_rows_bwd(gp.data(), pb.data(), gb.data(), rows, cols);
        CHECK(max_rel_diff(ga, gb) < 1e-5);
    }
    {
        const int m = 40, nn = 56, k = 24;
        auto a = randf(size_t(k) * m, 20);
        auto b2 = randf(size_t(k) * nn, 21);
        std::vector<float> ca(size_t(m) * nn), cb(size_t(m) * nn);
        K::ref::gemm_tn(a.data(), b2.data(), ca.data(), m, nn, k);
        K::gemm_tn(a.data(), b2.data(), cb.data(), m, nn, k);
        CHECK(max_rel_diff(ca, cb) < 1e-5);
        auto a2 = randf(size_t(m) * k, 22);
        auto b3 = randf(size_t(k) * nn, 23);
        K::ref::gemm_nn(a2.data(), b3.data(), ca.data(), m, nn, k);
        K::gemm_nn(a2.data(), b3.data(), cb.data(), m, nn, k);
        CHECK(max_rel_diff(ca, cb) < 1e-5);
        auto b4 = randf(size_t(nn) * k, 24);
        K::ref::gemm_nt(a2.data(), b4.data(), ca.data(), m, nn, k);
        K::gemm_nt(a2.data(), b4.data(), cb.data(), m, nn, k);
        CHECK(max_rel_diff(ca, cb) < 1e-5);
    }
    {
        const int cc = 6, hh = 10, ww = 14;
        auto in = randf(size_t(cc) * hh * ww, 25);
        std::vector<float> a(size_t(cc) * 4 * hh * ww), b(size_t(cc) * 4 * hh * ww);
        K::ref::upsample2x_fwd(in.data(), cc, hh, ww, a.data());
        K::upsample2x_fwd(in.data(), cc, hh, ww, b.data());
        CHECK(a == b);
        auto gout = randf(size_t(cc) * 4 * hh * ww, 26);
        std::vector<float> ga(size_t(cc) * hh * ww), gb(size_t(cc) * hh * ww);
        K::ref::upsample2x_bwd(gout.data(), cc, hh, ww, ga.data());
        K::upsample2x_bwd(gout.data(), cc, hh, ww, gb.data());
        CHECK(ga == gb);
    }
}

// ---------------------------------------------------------------------------
// Per-layer finite-difference gradient checks at double precision. Each layer
// gets a scalar loss L = sum(out * cot) so dL/dout = cot.
// ---------------------------------------------------------------------------

namespace {

template <typename Fwd>
double fd_wiggle(std::vector<double>& x, size_t i, double eps, Fwd fwd) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double lp = fwd();
    x[i] = keep - eps;
    const double lm = fwd();
    x[i] = keep;
    return (lp - lm) / (2 * eps);
}

void check_grad(const std::vector<double>& analytic, std::vector<double>& x,
                const std::function<double()>& fwd, uint64_t seed, int samples,
                double tol = 1e-6) {
    Rng pick(seed);
    double gmax = 1e-12;
    for (double g : analytic) gmax = std::max(gmax, std::abs(g));
    for (int r = 0; r < samples; ++r) {
        const size_t i = size_t(pick.below(x.size()));
        const double fd = fd_wiggle(x, i, 1e-6 * std::max(1.0, std::abs(x[i])), fwd);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-3 * gmax});
        CHECK(std::abs(fd - analytic[i]) / denom < tol);
    }
}

}  // namespace

TEST_CASE("finite differences: conv3x3 stride 1 and 2") {
    for (int stride : {1, 2}) {
        const int ci = 3, co = 4, h = 8, w = 8;
        const int n = (h / stride) * (w / stride);
        auto in = randd(size_t(ci) * h * w, 31);
        auto wt = randd(size_t(co) * ci * 9, 32, 0.3);
        auto bias = randd(size_t(co), 33, 0.1);
        auto cot = randd(size_t(co) * n, 34);
        std::vector<double> out(size_t(co) * n);
        auto loss = [&] {
            K::conv3x3_fwd(in.data(), ci, h, w, wt.data(), bias.data(), out.data(), co, stride);
            double L = 0;
            for (size_t i = 0; i < out.size(); ++i) L += out[i] * cot[i];
            return L;
        };
        loss();
        std::vector<double> gw(wt.size()), gb(bias.size()), gin(in.size());
        K::conv3x3_bwd_wb(cot.data(), co, in.data(), ci, h, w, gw.data(), gb.data(), stride);
        K::conv3x3_bwd_data(cot.data(), co, h, w, wt.data(), gin.data(), ci, stride);
        check_grad(gw, wt, loss, 41, 24);
        check_grad(gb, bias, loss, 42, 8);
        check_grad(gin, in, loss, 43, 24);
    }
}

TEST_CASE("finite differences: groupnorm") {
    const int c = 8, n = 30, groups = 4;
    auto x = randd(size_t(c) * n, 51);
    auto gamma = randd(size_t(c), 52, 0.5);
    auto beta = randd(size_t(c), 53, 0.5);
    auto cot = randd(size_t(c) * n, 54);
    std::vector<double> y(size_t(c) * n), m(groups), s(groups);
    auto loss = [&] {
        K::groupnorm_fwd(x.data(), c, n, groups, 1e-5, gamma.data(), beta.data(), y.data(),
                         m.data(), s.data());
        double L = 0;
        for (size_t i = 0; i < y.size(); ++i) L += y[i] * cot[i];
        return L;
    };
    loss();
    std::vector<double> gx(x.size()), gg(gamma.size()), gb(beta.size());
    K::groupnorm_bwd(cot.data(), x.data(), c, n, groups, gamma.data(), m.data(), s.data(),
                     gx.data(), gg.data(), gb.data());
    check_grad(gx, x, loss, 61, 30);
    check_grad(gg, gamma, loss, 62, 8);
    check_grad(gb, beta, loss, 63, 8);
}

TEST_CASE("finite differences: silu and softmax") {
    const size_t n = 64;
    auto x = randd(n, 71);
    auto cot = randd(n, 72);
    {
        std::vector<double> y(n);
        auto loss = [&] {
            K::silu_fwd(x.data(), y.data(), n);
            double L = 0;
            for (size_t i = 0; i < n; ++i) L += y[i] * cot[i];
            return L;
        };
        loss();
        std::vector<double> gx(n);
        K::silu_bwd(cot.data(), x.data(), gx.data(), n);
        check_grad(gx, x, loss, 73, 20);
    }
    {
        const int rows = 4, cols = 16;
        std::vector<double> p(n);
        auto loss = [&] {
            K::softmax_rows(x.data(), p.data(), rows, cols);
            double L = 0;
            for (size_t i = 0; i < n; ++i) L += p[i] * cot[i];
            return L;
        };
        loss();
        std::vector<double> gx(n);
        K::softmax_rows(x.data(), p.data(), rows, cols);
        K::softmax_rows_bwd(cot.data(), p.data(), gx.data(), rows, cols);
        check_grad(gx, x, loss, 74, 20);
    }
}

TEST_CASE("finite differences: linear") {
    const int in_n = 10, out_n = 6;
    auto x = randd(in_n, 81);
    auto wt = randd(size_t(out_n) * in_n, 82, 0.4);
    auto bias = randd(out_n, 83, 0.2);
    auto cot = randd(out_n, 84);
    std::vector<double> y(out_n);
    auto loss = [&] {
        K::linear_fwd(x.data(), in_n, wt.data(), bias.data(), y.data(), out_n);
        double L = 0;
        for (int i = 0; i < out_n; ++i) L += y[i] * cot[i];
        return L;
    };
    loss();
    std::vector<double> gx(in_n), gw(wt.size()), gb(bias.size());
    K::linear_bwd(cot.data(), x.data(), in_n, wt.data(), out_n, gx.data(), gw.data(), gb.data());
    check_grad(gx, x, loss, 85, 10);
    check_grad(gw, wt, loss, 86, 20);
    check_grad(gb, bias, loss, 87, 6);
}
