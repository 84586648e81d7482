#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "monetlab/evalmod.hpp"

using namespace monetlab;
using namespace monetlab::eval;

namespace {

std::vector<float> const_paint(int hw, float dna, float rna, float er, float agp, float mito) {
    std::vector<float> p(size_t(5) * hw * hw);
    const size_t n = size_t(hw) * hw;
    std::fill(p.begin(), p.begin() + long(n), dna);
    std::fill(p.begin() + long(n), p.begin() + long(2 * n), rna);
    std::fill(p.begin() + long(2 * n), p.begin() + long(3 * n), er);
    std::fill(p.begin() + long(3 * n), p.begin() + long(4 * n), agp);
    std::fill(p.begin() + long(4 * n), p.begin() + long(5 * n), mito);
    return p;
}

}  // namespace

TEST_CASE("rgb compositing color map") {
    const int hw = 4;
    // all zero -> black
    auto black = render_rgb01(const_paint(hw, 0, 0, 0, 0, 0).data(), hw, hw);
    for (float v : black.data) CHECK(v == 0.f);
    // DNA alone -> pure blue
    auto blue = render_rgb01(const_paint(hw, 1, 0, 0, 0, 0).data(), hw, hw);
    CHECK(blue.at3(0, 0, 0) == 0.f);
    CHECK(blue.at3(1, 0, 0) == 0.f);
    CHECK(blue.at3(2, 0, 0) == 1.f);
    // Mito -> green, RNA -> red
    auto green = render_rgb01(const_paint(hw, 0, 0, 0, 0, 1).data(), hw, hw);
    CHECK(green.at3(1, 0, 0) == 1.f);
    CHECK(green.at3(0, 0, 0) == 0.f);
    auto red = render_rgb01(const_paint(hw, 0, 1, 0, 0, 0).data(), hw, hw);
    CHECK(red.at3(0, 0, 0) == 1.f);
    CHECK(red.at3(2, 0, 0) == 0.f);
    // AGP teal + ER yellow saturate to white
    auto white = render_rgb01(const_paint(hw, 0, 0, 1, 1, 0).data(), hw, hw);
    CHECK(white.at3(0, 0, 0) == 1.f);
    CHECK(white.at3(1, 0, 0) == 1.f);
    CHECK(white.at3(2, 0, 0) == 1.f);
    // normalized wrapper maps -1 to black
    auto nblack = render_rgb(const_paint(hw, -1, -1, -1, -1, -1).data(), hw, hw);
    for (float v : nblack.data) CHECK(v == 0.f);
}

TEST_CASE("handcrafted features: determinism, dimension, constant-image zeros") {
    const int hw = 8;
    Rng rng(1);
    std::vector<float> img(size_t(5) * hw * hw);
    for (auto& v : img) v = float(rng.uniform(-1.0, 1.0));
    std::vector<const float*> imgs{img.data()};
    auto a = handcrafted_features(imgs, 5, hw, hw, FeatureSource::real_paint);
    auto b = handcrafted_features(imgs, 5, hw, hw, FeatureSource::real_paint);
    CHECK(a.d == 55);  // 5 channels x 11 features
    CHECK(a.data == b.data);

    auto flat = const_paint(hw, 0.3f, 0.3f, 0.3f, 0.3f, 0.3f);
    std::vector<const float*> fimz{flat.data()};
    auto f = handcrafted_features(fimz, 5, hw, hw, FeatureSource::real_paint);
    for (int c = 0; c < 5; ++c) {
        CHECK(f.data[size_t(c) * 11 + 1] == doctest::Approx(0.0).epsilon(1e-9));  // variance
        CHECK(f.data[size_t(c) * 11 + 2] == doctest::Approx(0.0).epsilon(1e-9));  // gradient
    }
}

TEST_CASE("frechet distance of a set with itself is zero") {
    Rng rng(2);
    FeatureSet a;
    a.n = 12;
    a.d = 3;
    a.extractor = "t";
    a.data.resize(size_t(a.n) * a.d);
    for (auto& v : a.data) v = rng.normal();
    CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("frechet distance closed form: identity covariances, mean offset 3") {
    // four points at (+-s, +-s) around the mean give exactly unit covariance
    const double s = std::sqrt(3.0) / 2.0;
    auto make = [&](double mx) {
        FeatureSet f;
        f.n = 4;
        f.d = 2;
        f.extractor = "t";
        f.data = {mx + s, s, mx + s, -s, mx - s, s, mx - s, -s};
        return f;
    };
    FeatureSet a = make(0.0), b = make(3.0);
    CHECK(frechet_distance(a, b) == doctest::Approx(9.0).epsilon(1e-9));
    // symmetry
    CHECK(frechet_distance(b, a) == doctest::Approx(frechet_distance(a, b)).epsilon(1e-12));
}

TEST_CASE("frechet distance matches a 64-bit eigen oracle on random gaussians") {
    Rng rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        const int d = 3, n = 40;
        FeatureSet a, b;
        a.n = b.n = n;
        a.d = b.d = d;
        a.extractor = b.extractor = "t";
        a.data.resize(size_t(n) * d);
        b.data.resize(size_t(n) * d);
        for (auto& v : a.data) v = rng.normal();
        for (auto& v : b.data) v = rng.normal() * 1.5 + 0.4;

        // independent oracle: Eigen self-adjoint solver at double precision
        auto mean_cov = [&](const FeatureSet& f, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
            mu = Eigen::VectorXd::Zero(d);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) mu[j] += f.row(i)[j];
            mu /= double(n);
            cov = Eigen::MatrixXd::Zero(d, d);
            for (int i = 0; i < n; ++i) {
                Eigen::VectorXd r(d);
                for (int j = 0; j < d; ++j) r[j] = f.row(i)[j] - mu[j];
                cov += r * r.transpose();
            }
            cov /= double(n - 1);
        };
        Eigen::VectorXd mu_a, mu_b;
        Eigen::MatrixXd ca, cb;
        mean_cov(a, mu_a, ca);
        mean_cov(b, mu_b, cb);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(ca);
        Eigen::MatrixXd ra = es_a.operatorSqrt();
        Eigen::MatrixXd prod = ra * cb * ra;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_p((prod + prod.transpose()) / 2.0);
        double tr_sqrt = 0;
        for (int i = 0; i < d; ++i) tr_sqrt += std::sqrt(std::max(0.0, es_p.eigenvalues()[i]));
        const double oracle =
            (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_sqrt;

        CHECK(frechet_distance(a, b) == doctest::Approx(oracle).epsilon(1e-4));
    }
}

TEST_CASE("jacobi eigensolver agrees with Eigen on random symmetric matrices") {
    Rng rng(4);
    for (int rep = 0; rep < 5; ++rep) {
        const int d = 6;
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j <= i; ++j) {
                m(i, j) = rng.normal();
                m(j, i) = m(i, j);
            }
        std::vector<double> a(size_t(d) * d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) a[size_t(i) * d + j] = m(i, j);
        std::vector<double> evals, evecs;
        sym_eigen(a, d, evals, evecs);
        std::sort(evals.begin(), evals.end());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        for (int i = 0; i < d; ++i)
            CHECK(evals[size_t(i)] == doctest::Approx(es.eigenvalues()[i]).epsilon(1e-9));
    }
}

TEST_CASE("frechet preconditions") {
    FeatureSet a, b;
    a.n = b.n = 4;
    a.d = b.d = 2;
    a.extractor = "x";
    b.extractor = "y";
    a.data.assign(8, 0.0);
    b.data.assign(8, 0.0);
    CHECK_THROWS_AS(frechet_distance(a, b), Error);  // fingerprint mismatch
    b.extractor = "x";
    a.n = 2;  // below D+1
    a.data.assign(4, 0.0);
    CHECK_THROWS_AS(frechet_distance(a, b), Error);
}

TEST_CASE("auc: separated, the worked four-point example, ties, complement") {
    // perfectly separated
    CHECK(auc_binary({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}) == doctest::Approx(1.0));
    // worked example: 3 of 4 pos/neg pairs concordant
    CHECK(auc_binary({0.1, 0.4, 0.35, 0.8}, {false, false, true, true}) == doctest::Approx(0.75));
    // all ties -> half credit
    CHECK(auc_binary({0.5, 0.5, 0.5, 0.5}, {false, true, false, true}) == doctest::Approx(0.5));
    // undefined when a side is empty
    CHECK_THROWS_AS(auc_binary({0.5, 0.6}, {true, true}), Error);
}

TEST_CASE("auc equals brute-force pair counting on random instances") {
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 2 + int(rng.below(40));
        std::vector<double> scores(size_t(n));
        std::vector<bool> pos(size_t(n));
        int npos = 0;
        for (int i = 0; i < n; ++i) {
            scores[size_t(i)] = double(rng.below(12)) / 4.0;  // force ties
            pos[size_t(i)] = rng.below(2) == 1;
            npos += pos[size_t(i)];
        }
        if (npos == 0 || npos == n) continue;
        double num = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (!pos[size_t(i)] || pos[size_t(j)]) continue;
                if (scores[size_t(i)] > scores[size_t(j)]) num += 1.0;
                else if (scores[size_t(i)] == scores[size_t(j)]) num += 0.5;
            }
        const double brute = num / (double(npos) * double(n - npos));
        CHECK(auc_binary(scores, pos) == doctest::Approx(brute).epsilon(1e-12));
    }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(6);
    std::vector<double> scores(30);
    std::vector<bool> pos(30);
    for (size_t i = 0; i < 30; ++i) {
        scores[i] = rng.normal();
        pos[i] = rng.below(2) == 1;
    }
    pos[0] = true;
    pos[1] = false;
    const double base = auc_binary(scores, pos);
    std::vector<double> warped(30);
    for (size_t i = 0; i < 30; ++i) warped[i] = std::exp(2.0 * scores[i]) + 5.0;
    CHECK(auc_binary(warped, pos) == doctest::Approx(base).epsilon(1e-12));
    // complementing labels maps AUC to 1 - AUC
    std::vector<bool> flipped(30);
    for (size_t i = 0; i < 30; ++i) flipped[i] = !pos[i];
    CHECK(auc_binary(scores, flipped) == doctest::Approx(1.0 - base).epsilon(1e-12));
}

TEST_CASE("one_vs_all_auc per class and the undefined-column error") {
    std::vector<std::vector<double>> scores = {
        {0.9, 0.05, 0.05}, {0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.2, 0.7, 0.1},
        {0.1, 0.1, 0.8},   {0.2, 0.2, 0.6},
    };
    std::vector<int> labels = {0, 0, 1, 1, 2, 2};
    auto auc = one_vs_all_auc(scores, labels, 3);
    for (double v : auc) CHECK(v == doctest::Approx(1.0));
    // a class with no positives is undefined
    std::vector<int> bad = {0, 0, 1, 1, 1, 1};
    CHECK_THROWS_AS(one_vs_all_auc(scores, bad, 3), Error);
}

// --- probe behaviour ------------------------------------------------------------

namespace {

// tiny two-class set: class 1 images have a brighter center blob
void toy_set(std::vector<std::vector<float>>& imgs, std::vector<int>& labels, int count, int hw,
             uint64_t seed, bool separable) {
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        const int label = i % 2;
        std::vector<float> img(size_t(hw) * hw);
        for (auto& v : img) v = float(rng.normal() * 0.3);
        if (separable && label == 1) {
            for (int y = hw / 4; y < 3 * hw / 4; ++y)
                for (int x = hw / 4; x < 3 * hw / 4; ++x) img[size_t(y) * hw + x] += 0.8f;
        }
        imgs.push_back(std::move(img));
        labels.push_back(label);
    }
}

}  // namespace

TEST_CASE("probe learns a linearly separable toy set") {
    std::vector<std::vector<float>> imgs;
    std::vector<int> labels;
    toy_set(imgs, labels, 60, 16, 7, true);
    std::vector<const float*> ptrs;
    for (auto& im : imgs) ptrs.push_back(im.data());
    probe::ProbeConfig pc{.in_channels = 1, .classes = 2, .steps = 120, .seed = 3};
    auto cv = probe::cross_validate(pc, ptrs, labels, 16, 16, 3);
    MESSAGE("separable toy mean AUC ", cv.mean_auc);
    CHECK(cv.mean_auc > 0.95);
}

TEST_CASE("probe on shuffled labels sits at chance") {
    std::vector<std::vector<float>> imgs;
    std::vector<int> labels;
    toy_set(imgs, labels, 60, 16, 8, false);  // pure noise images
    std::vector<const float*> ptrs;
    for (auto& im : imgs) ptrs.push_back(im.data());
    probe::ProbeConfig pc{.in_channels = 1, .classes = 2, .steps = 120, .seed = 4};
    auto cv = probe::cross_validate(pc, ptrs, labels, 16, 16, 3);
    MESSAGE("null mean AUC ", cv.mean_auc);
    CHECK(cv.mean_auc > 0.4);
    CHECK(cv.mean_auc < 0.6);
}

TEST_CASE("probe training is deterministic in its seed") {
    std::vector<std::vector<float>> imgs;
    std::vector<int> labels;
    toy_set(imgs, labels, 24, 16, 9, true);
    std::vector<const float*> ptrs;
    for (auto& im : imgs) ptrs.push_back(im.data());
    probe::ProbeConfig pc{.in_channels = 1, .classes = 2, .steps = 30, .seed = 5};
    auto p1 = probe::train_probe(pc, ptrs, labels, 16, 16);
    auto p2 = probe::train_probe(pc, ptrs, labels, 16, 16);
    CHECK(p1.params == p2.params);
    CHECK(p1.fingerprint == p2.fingerprint);
}

TEST_CASE("cross validation rejects classes smaller than the fold count") {
    std::vector<std::vector<float>> imgs;
    std::vector<int> labels;
    toy_set(imgs, labels, 8, 16, 10, true);  // 4 per class
    std::vector<const float*> ptrs;
    for (auto& im : imgs) ptrs.push_back(im.data());
    probe::ProbeConfig pc{.in_channels = 1, .classes = 2, .steps = 10, .seed = 6};
    CHECK_THROWS_AS(probe::cross_validate(pc, ptrs, labels, 16, 16, 5), Error);
}

TEST_CASE("probe feature sets carry the trained fingerprint") {
    std::vector<std::vector<float>> imgs;
    std::vector<int> labels;
    toy_set(imgs, labels, 24, 16, 11, true);
    std::vector<const float*> ptrs;
    for (auto& im : imgs) ptrs.push_back(im.data());
    probe::ProbeConfig pc{.in_channels = 1, .classes = 2, .steps = 20, .seed = 7};
    auto p = probe::train_probe(pc, ptrs, labels, 16, 16);
    auto fs = probe_feature_set(p, ptrs, 16, 16, FeatureSource::real_paint);
    CHECK(fs.d == pc.c3);
    CHECK(fs.extractor == p.fingerprint);
    // distances require matching extractors: a handcrafted set must be rejected
    auto hc = handcrafted_features(ptrs, 1, 16, 16, FeatureSource::real_paint);
    CHECK_THROWS_AS(frechet_distance(fs, hc), Error);
}
