#include "monetlab/probe.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "monetlab/common.hpp"
#include "monetlab/evalmod.hpp"
#include "monetlab/kernels.hpp"

namespace monetlab::probe {

namespace K = monetlab::kernels;

struct Layout {
    size_t w1, b1, w2, b2, w3, b3, fw, fb, total;
};

static Layout layout(const ProbeConfig& c) {
    Layout l{};
    size_t off = 0;
    auto add = [&](size_t n) {
        size_t o = off;
        off += n;
        return o;
    };
    l.w1 = add(size_t(c.c1) * c.in_channels * 9);
    l.b1 = add(size_t(c.c1));
    l.w2 = add(size_t(c.c2) * c.c1 * 9);
    l.b2 = add(size_t(c.c2));
    l.w3 = add(size_t(c.c3) * c.c2 * 9);
    l.b3 = add(size_t(c.c3));
    l.fw = add(size_t(c.classes) * c.c3);
    l.fb = add(size_t(c.classes));
    l.total = off;
    return l;
}

size_t probe_param_count(const ProbeConfig& cfg) { return layout(cfg).total; }

static std::vector<float> init_probe_params(const ProbeConfig& c) {
    Layout l = layout(c);
    std::vector<float> p(l.total, 0.f);
    Rng rng = Rng::split(c.seed, 0x9b0e);
    auto fill = [&](size_t off, size_t n, size_t fan_in) {
        const float bound = std::sqrt(1.f / float(fan_in));
        for (size_t i = 0; i < n; ++i)
            p[off + i] = float(rng.uniform(-double(bound), double(bound)));
    };
    fill(l.w1, size_t(c.c1) * c.in_channels * 9, size_t(c.in_channels) * 9);
    fill(l.w2, size_t(c.c2) * c.c1 * 9, size_t(c.c1) * 9);
    fill(l.w3, size_t(c.c3) * c.c2 * 9, size_t(c.c2) * 9);
    fill(l.fw, size_t(c.classes) * c.c3, size_t(c.c3));
    return p;
}

struct Acts {
    std::vector<float> z1, a1, z2, a2, z3, a3, pooled, logits;
};

static void probe_forward(const ProbeConfig& c, const Layout& l, const float* params,
                          const float* img, int h, int w, Acts& a) {
    const int h1 = h / 2, w1 = w / 2, h2 = h / 4, w2 = w / 4, h3 = h / 8, w3 = w / 8;
    a.z1.resize(size_t(c.c1) * h1 * w1);
    a.a1.resize(a.z1.size());
    a.z2.resize(size_t(c.c2) * h2 * w2);
    a.a2.resize(a.z2.size());
    a.z3.resize(size_t(c.c3) * h3 * w3);
    a.a3.resize(a.z3.size());
    a.pooled.resize(size_t(c.c3));
    a.logits.resize(size_t(c.classes));
    K::conv3x3_fwd(img, c.in_channels, h, w, params + l.w1, params + l.b1, a.z1.data(), c.c1, 2);
    K::silu_fwd(a.z1.data(), a.a1.data(), a.z1.size());
    K::conv3x3_fwd(a.a1.data(), c.c1, h1, w1, params + l.w2, params + l.b2, a.z2.data(), c.c2, 2);
    K::silu_fwd(a.z2.data(), a.a2.data(), a.z2.size());
    K::conv3x3_fwd(a.a2.data(), c.c2, h2, w2, params + l.w3, params + l.b3, a.z3.data(), c.c3, 2);
    K::silu_fwd(a.z3.data(), a.a3.data(), a.z3.size());
    const int npos = h3 * w3;
    for (int cc = 0; cc < c.c3; ++cc) {
        double s = 0.0;
        const float* row = a.a3.data() + size_t(cc) * npos;
        for (int p = 0; p < npos; ++p) s += row[p];
        a.pooled[size_t(cc)] = float(s / npos);
    }
    K::linear_fwd(a.pooled.data(), c.c3, params + l.fw, params + l.fb, a.logits.data(),
                  c.classes);
}

// cross-entropy loss + full backward; returns loss, accumulates grads
static double probe_backward(const ProbeConfig& c, const Layout& l, const float* params,
                             const float* img, int h, int w, int label, Acts& a, float* grads) {
    probe_forward(c, l, params, img, h, w, a);
    // softmax CE
    double mx = a.logits[0];
    for (int k = 1; k < c.classes; ++k) mx = std::max(mx, double(a.logits[size_t(k)]));
    double sum = 0.0;
    std::vector<double> p(size_t(c.classes));
    for (int k = 0; k < c.classes; ++k) {
        p[size_t(k)] = std::exp(double(a.logits[size_t(k)]) - mx);
        sum += p[size_t(k)];
    }
    for (auto& v : p) v /= sum;
    const double loss = -std::log(std::max(p[size_t(label)], 1e-12));

    std::vector<float> dlogits(size_t(c.classes));
    for (int k = 0; k < c.classes; ++k)
        dlogits[size_t(k)] = float(p[size_t(k)] - (k == label ? 1.0 : 0.0));

    const int h1 = h / 2, w1 = w / 2, h2 = h / 4, w2 = w / 4, h3 = h / 8, w3 = w / 8;
    const int npos = h3 * w3;
    std::vector<float> g_pooled(size_t(c.c3));
    K::linear_bwd(dlogits.data(), a.pooled.data(), c.c3, params + l.fw, c.classes,
                  g_pooled.data(), grads + l.fw, grads + l.fb);
    std::vector<float> g_a3(a.a3.size());
    for (int cc = 0; cc < c.c3; ++cc) {
        const float gv = g_pooled[size_t(cc)] / float(npos);
        float* row = g_a3.data() + size_t(cc) * npos;
        for (int p2 = 0; p2 < npos; ++p2) row[p2] = gv;
    }
    std::vector<float> g_z3(a.z3.size());
    K::silu_bwd(g_a3.data(), a.z3.data(), g_z3.data(), g_z3.size());
    K::conv3x3_bwd_wb(g_z3.data(), c.c3, a.a2.data(), c.c2, h2, w2, grads + l.w3, grads + l.b3, 2);
    std::vector<float> g_a2(a.a2.size());
    K::conv3x3_bwd_data(g_z3.data(), c.c3, h2, w2, params + l.w3, g_a2.data(), c.c2, 2);
    std::vector<float> g_z2(a.z2.size());
    K::silu_bwd(g_a2.data(), a.z2.data(), g_z2.data(), g_z2.size());
    K::conv3x3_bwd_wb(g_z2.data(), c.c2, a.a1.data(), c.c1, h1, w1, grads + l.w2, grads + l.b2, 2);
    std::vector<float> g_a1(a.a1.size());
    K::conv3x3_bwd_data(g_z2.data(), c.c2, h1, w1, params + l.w2, g_a1.data(), c.c1, 2);
    std::vector<float> g_z1(a.z1.size());
    K::silu_bwd(g_a1.data(), a.z1.data(), g_z1.data(), g_z1.size());
    K::conv3x3_bwd_wb(g_z1.data(), c.c1, img, c.in_channels, h, w, grads + l.w1, grads + l.b1, 2);
    return loss;
}

Probe train_probe(const ProbeConfig& cfg, const std::vector<const float*>& images,
                  const std::vector<int>& labels, int h, int w) {
    if (images.empty() || images.size() != labels.size())
        throw usage_error("train_probe: images/labels mismatch");
    if (h % 8 != 0 || w % 8 != 0)
        throw usage_error("train_probe: image dims must be multiples of 8");
    int present = 0;
    std::vector<int> counts(size_t(cfg.classes), 0);
    for (int lb : labels) {
        if (lb < 0 || lb >= cfg.classes) throw data_error("train_probe: label out of range");
        counts[size_t(lb)]++;
    }
    for (int c : counts) present += c > 0 ? 1 : 0;
    if (present < 2) throw usage_error("train_probe: need at least 2 classes present");

    Layout l = layout(cfg);
    Probe p;
    p.cfg = cfg;
    p.params = init_probe_params(cfg);

    diffusion::AdamState opt;
    Rng rng = Rng::split(cfg.seed, 0x9b0f);
    std::vector<float> grads(l.total);

    const int bsz = std::min<int>(cfg.batch, int(images.size()));
    std::vector<size_t> idx(size_t(bsz));
    std::vector<std::vector<float>> item_grads(size_t(bsz));
    for (int step = 0; step < cfg.steps; ++step) {
        for (int b = 0; b < bsz; ++b) idx[size_t(b)] = size_t(rng.below(images.size()));
        std::vector<double> losses(size_t(bsz), 0.0);
#pragma omp parallel for schedule(static)
        for (long long b = 0; b < (long long)bsz; ++b) {
            Acts acts;
            item_grads[size_t(b)].assign(l.total, 0.f);
            losses[size_t(b)] = probe_backward(cfg, l, p.params.data(), images[idx[size_t(b)]], h,
                                               w, labels[idx[size_t(b)]], acts,
                                               item_grads[size_t(b)].data());
        }
        std::fill(grads.begin(), grads.end(), 0.f);
        for (int b = 0; b < bsz; ++b)
            for (size_t j = 0; j < l.total; ++j) grads[j] += item_grads[size_t(b)][j] / float(bsz);
        double loss = 0.0;
        for (double v : losses) loss += v;
        if (!std::isfinite(loss)) throw numeric_error("train_probe: non-finite loss");
        diffusion::adam_update(p.params, grads, opt, cfg.lr);
    }

    // fingerprint ties extracted features to this exact trained probe
    uint64_t hsh = 0x811c9dc5ULL;
    for (float v : p.params) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        hsh = splitmix64(hsh ^= bits);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "probe-v1:in%d:c%d:%016llx", cfg.in_channels, cfg.classes,
                  (unsigned long long)hsh);
    p.fingerprint = buf;
    return p;
}

std::vector<double> probe_scores(const Probe& p, const float* image, int h, int w) {
    Layout l = layout(p.cfg);
    Acts a;
    probe_forward(p.cfg, l, p.params.data(), image, h, w, a);
    double mx = a.logits[0];
    for (int k = 1; k < p.cfg.classes; ++k) mx = std::max(mx, double(a.logits[size_t(k)]));
    std::vector<double> out(size_t(p.cfg.classes));
    double sum = 0.0;
    for (int k = 0; k < p.cfg.classes; ++k) {
        out[size_t(k)] = std::exp(double(a.logits[size_t(k)]) - mx);
        sum += out[size_t(k)];
    }
    for (auto& v : out) v /= sum;
    return out;
}

std::vector<double> probe_features(const Probe& p, const float* image, int h, int w) {
    Layout l = layout(p.cfg);
    Acts a;
    probe_forward(p.cfg, l, p.params.data(), image, h, w, a);
    return std::vector<double>(a.pooled.begin(), a.pooled.end());
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int classes, int folds) {
    std::vector<int> fold(labels.size(), -1);
    std::vector<int> next(size_t(classes), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
        const int c = labels[i];
        fold[i] = next[size_t(c)] % folds;
        next[size_t(c)]++;
    }
    return fold;
}

CvResult cross_validate(const ProbeConfig& cfg, const std::vector<const float*>& images,
                        const std::vector<int>& labels, int h, int w, int folds) {
    std::vector<int> counts(size_t(cfg.classes), 0);
    for (int lb : labels) counts.at(size_t(lb))++;
    for (int c = 0; c < cfg.classes; ++c)
        if (counts[size_t(c)] < folds)
            throw usage_error("cross_validate: class " + std::to_string(c) + " has " +
                              std::to_string(counts[size_t(c)]) + " examples, fewer than " +
                              std::to_string(folds) + " folds");
    const std::vector<int> fold = stratified_folds(labels, cfg.classes, folds);

    CvResult r;
    r.classes = cfg.classes;
    r.folds = folds;
    for (int f = 0; f < folds; ++f) {
        std::vector<const float*> tr_img, te_img;
        std::vector<int> tr_lab, te_lab;
        for (size_t i = 0; i < images.size(); ++i) {
            if (fold[i] == f) {
                te_img.push_back(images[i]);
                te_lab.push_back(labels[i]);
            } else {
                tr_img.push_back(images[i]);
                tr_lab.push_back(labels[i]);
            }
        }
        ProbeConfig fc = cfg;
        fc.seed = mix_seed(cfg.seed, uint64_t(f) + 1);
        Probe p = train_probe(fc, tr_img, tr_lab, h, w);
        std::vector<std::vector<double>> scores(te_img.size());
        for (size_t i = 0; i < te_img.size(); ++i) scores[i] = probe_scores(p, te_img[i], h, w);
        r.fold_auc.push_back(eval::one_vs_all_auc(scores, te_lab, cfg.classes));
    }
    r.class_mean.assign(size_t(cfg.classes), 0.0);
    r.class_std.assign(size_t(cfg.classes), 0.0);
    for (int c = 0; c < cfg.classes; ++c) {
        double m = 0.0;
        for (int f = 0; f < folds; ++f) m += r.fold_auc[size_t(f)][size_t(c)];
        m /= folds;
        double sq = 0.0;
        for (int f = 0; f < folds; ++f) {
            const double d = r.fold_auc[size_t(f)][size_t(c)] - m;
            sq += d * d;
        }
        r.class_mean[size_t(c)] = m;
        r.class_std[size_t(c)] = folds > 1 ? std::sqrt(sq / (folds - 1)) : 0.0;
        r.mean_auc += m;
    }
    r.mean_auc /= cfg.classes;
    return r;
}

}  // namespace monetlab::probe
