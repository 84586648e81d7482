#include "monetlab/evalmod.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "monetlab/common.hpp"
#include "monetlab/store.hpp"

namespace monetlab::eval {

namespace fs = std::filesystem;
using nlohmann::json;

// --- RGB compositing ---------------------------------------------------------

Tensor render_rgb01(const float* paint01, int h, int w) {
    const size_t n = size_t(h) * w;
    Tensor rgb({3, uint32_t(h), uint32_t(w)});
    auto chan = [&](int c) { return paint01 + size_t(c) * n; };
    for (size_t i = 0; i < n; ++i) {
        auto v = [&](int c) { return std::clamp(chan(c)[i], 0.f, 1.f); };
        const float dna = v(0), rna = v(1), er = v(2), agp = v(3), mito = v(4);
        rgb.data[i] = std::min(1.f, rna + er);             // red
        rgb.data[n + i] = std::min(1.f, mito + agp + er);  // green
        rgb.data[2 * n + i] = std::min(1.f, dna + agp);    // blue
    }
    return rgb;
}

Tensor render_rgb(const float* paint5, int h, int w) {
    const size_t n5 = 5 * size_t(h) * w;
    std::vector<float> p01(n5);
    for (size_t i = 0; i < n5; ++i) p01[i] = (paint5[i] + 1.f) * 0.5f;
    return render_rgb01(p01.data(), h, w);
}

Tensor make_grid(const std::vector<Tensor>& rgbs, int cols) {
    if (rgbs.empty()) throw usage_error("make_grid: no images");
    const uint32_t h = rgbs[0].dims[1], w = rgbs[0].dims[2];
    const int pad = 2;
    const int rows = int((rgbs.size() + size_t(cols) - 1) / size_t(cols));
    Tensor grid({3, uint32_t(rows) * (h + pad) + pad, uint32_t(cols) * (w + pad) + pad});
    for (size_t i = 0; i < rgbs.size(); ++i) {
        const int r = int(i) / cols, c = int(i) % cols;
        for (uint32_t ch = 0; ch < 3; ++ch)
            for (uint32_t y = 0; y < h; ++y)
                for (uint32_t x = 0; x < w; ++x)
                    grid.at3(ch, uint32_t(r) * (h + pad) + pad + y,
                             uint32_t(c) * (w + pad) + pad + x) = rgbs[i].at3(ch, y, x);
    }
    return grid;
}

// --- features ----------------------------------------------------------------

const char* feature_source_name(FeatureSource s) {
    switch (s) {
        case FeatureSource::real_paint: return "real_paint";
        case FeatureSource::generated_paint: return "generated_paint";
        case FeatureSource::brightfield: return "brightfield";
    }
    return "?";
}

FeatureSet handcrafted_features(const std::vector<const float*>& images, int channels, int h,
                                int w, FeatureSource source) {
    constexpr int kPerChannel = 11;  // mean, var, gradient energy, 8 histogram bins
    FeatureSet fs;
    fs.n = int(images.size());
    fs.d = channels * kPerChannel;
    fs.data.assign(size_t(fs.n) * fs.d, 0.0);
    fs.source = source;
    fs.extractor = "handcrafted-v1:c" + std::to_string(channels);
    const size_t n = size_t(h) * w;
    for (size_t i = 0; i < images.size(); ++i) {
        double* row = fs.data.data() + i * size_t(fs.d);
        for (int c = 0; c < channels; ++c) {
            const float* p = images[i] + size_t(c) * n;
            double mean = 0.0, sq = 0.0, grad = 0.0;
            double hist[8] = {};
            for (size_t j = 0; j < n; ++j) {
                const double v = (double(p[j]) + 1.0) * 0.5;  // to [0,1]
                mean += v;
                sq += v * v;
                const double vc = std::clamp(v, 0.0, 1.0);
                int bin = std::min(7, int(vc * 8.0));
                hist[bin] += 1.0;
            }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x + 1 < w; ++x) {
                    const double d = double(p[size_t(y) * w + x + 1]) - double(p[size_t(y) * w + x]);
                    grad += d * d;
                }
            for (int y = 0; y + 1 < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double d = double(p[size_t(y + 1) * w + x]) - double(p[size_t(y) * w + x]);
                    grad += d * d;
                }
            mean /= double(n);
            const double var = std::max(0.0, sq / double(n) - mean * mean);
            double* f = row + size_t(c) * kPerChannel;
            f[0] = mean;
            f[1] = var;
            f[2] = grad / double(n);
            for (int b = 0; b < 8; ++b) f[3 + b] = hist[b] / double(n);
        }
    }
    return fs;
}

FeatureSet probe_feature_set(const probe::Probe& p, const std::vector<const float*>& images,
                             int h, int w, FeatureSource source) {
    FeatureSet fs;
    fs.n = int(images.size());
    fs.d = p.cfg.c3;
    fs.data.assign(size_t(fs.n) * fs.d, 0.0);
    fs.source = source;
    fs.extractor = p.fingerprint;
    for (size_t i = 0; i < images.size(); ++i) {
        auto feats = probe_features(p, images[i], h, w);
        std::copy(feats.begin(), feats.end(), fs.data.begin() + long(i * size_t(fs.d)));
    }
    return fs;
}

// --- symmetric eigensolver (cyclic Jacobi) -------------------------------------

void sym_eigen(std::vector<double>& a, int n, std::vector<double>& evals,
               std::vector<double>& evecs) {
    evecs.assign(size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i) evecs[size_t(i) * n + i] = 1.0;
    auto A = [&](int i, int j) -> double& { return a[size_t(i) * n + j]; };
    auto V = [&](int i, int j) -> double& { return evecs[size_t(i) * n + j]; };

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0, diag = 0.0;
        for (int i = 0; i < n; ++i) {
            diag += A(i, i) * A(i, i);
            for (int j = i + 1; j < n; ++j) off += 2.0 * A(i, j) * A(i, j);
        }
        if (off <= 1e-26 * std::max(diag, 1e-300)) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    evals.resize(size_t(n));
    for (int i = 0; i < n; ++i) evals[size_t(i)] = A(i, i);
}

// --- Frechet distance ----------------------------------------------------------

static void mean_cov(const FeatureSet& f, std::vector<double>& mu, std::vector<double>& cov) {
    const int n = f.n, d = f.d;
    mu.assign(size_t(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) mu[size_t(j)] += f.row(i)[j];
    for (auto& v : mu) v /= double(n);
    cov.assign(size_t(d) * d, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* r = f.row(i);
        for (int j = 0; j < d; ++j) {
            const double dj = r[j] - mu[size_t(j)];
            for (int k = j; k < d; ++k)
                cov[size_t(j) * d + k] += dj * (r[k] - mu[size_t(k)]);
        }
    }
    for (int j = 0; j < d; ++j)
        for (int k = j; k < d; ++k) {
            cov[size_t(j) * d + k] /= double(n - 1);
            cov[size_t(k) * d + j] = cov[size_t(j) * d + k];
        }
}

// eigenvalue clamp shared by both roots: tiny negatives are rounding, large
// negatives mean the input was not a covariance
static std::vector<double> clamp_evals(std::vector<double> evals, const char* what) {
    double mx = 0.0;
    for (double v : evals) mx = std::max(mx, std::abs(v));
    const double tol = 1e-9 * std::max(mx, 1e-12);
    for (double& v : evals) {
        if (v < -tol)
            throw numeric_error(std::string("frechet_distance: ") + what +
                                " not PSD beyond tolerance (min eigenvalue " +
                                std::to_string(v) + ", max " + std::to_string(mx) + ")");
        if (v < 0) v = 0;
    }
    return evals;
}

static std::vector<double> sym_sqrt(std::vector<double> m, int d, const char* what) {
    std::vector<double> evals, evecs;
    sym_eigen(m, d, evals, evecs);
    evals = clamp_evals(std::move(evals), what);
    std::vector<double> out(size_t(d) * d, 0.0);
    for (int k = 0; k < d; ++k) {
        const double s = std::sqrt(evals[size_t(k)]);
        if (s == 0.0) continue;
        for (int i = 0; i < d; ++i) {
            const double vik = evecs[size_t(i) * d + k] * s;
            for (int j = 0; j < d; ++j) out[size_t(i) * d + j] += vik * evecs[size_t(j) * d + k];
        }
    }
    return out;
}

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
    if (a.d != b.d) throw usage_error("frechet_distance: feature dims differ");
    if (a.extractor != b.extractor)
        throw data_error("frechet_distance: extractor fingerprints differ ('" + a.extractor +
                         "' vs '" + b.extractor + "')");
    if (a.n < a.d + 1 || b.n < b.d + 1)
        throw usage_error("frechet_distance: need at least D+1 = " + std::to_string(a.d + 1) +
                          " samples per set (got " + std::to_string(a.n) + ", " +
                          std::to_string(b.n) + ")");
    const int d = a.d;
    std::vector<double> mu_a, mu_b, cov_a, cov_b;
    mean_cov(a, mu_a, cov_a);
    mean_cov(b, mu_b, cov_b);

    double mean_term = 0.0;
    for (int j = 0; j < d; ++j) {
        const double dd = mu_a[size_t(j)] - mu_b[size_t(j)];
        mean_term += dd * dd;
    }
    double tr_a = 0.0, tr_b = 0.0;
    for (int j = 0; j < d; ++j) {
        tr_a += cov_a[size_t(j) * d + j];
        tr_b += cov_b[size_t(j) * d + j];
    }

    std::vector<double> ra = sym_sqrt(cov_a, d, "first covariance");
    // s = ra * cov_b * ra, symmetrized
    std::vector<double> tmp(size_t(d) * d, 0.0), s(size_t(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double v = ra[size_t(i) * d + k];
            if (v == 0.0) continue;
            for (int j = 0; j < d; ++j) tmp[size_t(i) * d + j] += v * cov_b[size_t(k) * d + j];
        }
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double v = tmp[size_t(i) * d + k];
            if (v == 0.0) continue;
            for (int j = 0; j < d; ++j) s[size_t(i) * d + j] += v * ra[size_t(k) * d + j];
        }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double m = 0.5 * (s[size_t(i) * d + j] + s[size_t(j) * d + i]);
            s[size_t(i) * d + j] = m;
            s[size_t(j) * d + i] = m;
        }
    std::vector<double> evals, evecs;
    sym_eigen(s, d, evals, evecs);
    evals = clamp_evals(std::move(evals), "symmetrized product");
    double tr_sqrt = 0.0;
    for (double v : evals) tr_sqrt += std::sqrt(v);

    return std::max(0.0, mean_term + tr_a + tr_b - 2.0 * tr_sqrt);
}

// --- AUC -----------------------------------------------------------------------

double auc_binary(const std::vector<double>& scores, const std::vector<bool>& positive) {
    const size_t n = scores.size();
    size_t npos = 0;
    for (bool b : positive) npos += b ? 1 : 0;
    const size_t nneg = n - npos;
    if (npos == 0 || nneg == 0)
        throw data_error("auc: undefined, class has no positives or no negatives");
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return scores[i] < scores[j]; });
    // average ranks over ties -> half credit
    std::vector<double> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;  // 1-based
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rpos = 0.0;
    for (size_t k = 0; k < n; ++k)
        if (positive[k]) rpos += rank[k];
    return (rpos - 0.5 * double(npos) * double(npos + 1)) / (double(npos) * double(nneg));
}

std::vector<double> one_vs_all_auc(const std::vector<std::vector<double>>& scores,
                                   const std::vector<int>& labels, int classes) {
    if (scores.size() != labels.size() || scores.empty())
        throw usage_error("one_vs_all_auc: scores/labels mismatch");
    std::vector<double> out(size_t(classes), 0.0);
    for (int c = 0; c < classes; ++c) {
        std::vector<double> col(scores.size());
        std::vector<bool> pos(scores.size());
        for (size_t i = 0; i < scores.size(); ++i) {
            col[i] = scores[i].at(size_t(c));
            pos[i] = labels[i] == c;
        }
        out[size_t(c)] = auc_binary(col, pos);
    }
    return out;
}

// --- protocols -------------------------------------------------------------------

static json opt_to_json(const EvalOptions& o) {
    return json{{"eval_images", o.eval_images}, {"sampler_steps", o.sampler_steps},
                {"folds", o.folds},             {"probe_steps", o.probe_steps},
                {"seed", o.seed},               {"features", o.features}};
}

std::vector<std::vector<float>> generate_paint(const model::UNet& net,
                                               const std::vector<float>& params,
                                               const std::vector<pipeline::NormalizedStack>& stacks,
                                               const float* ref6, int steps, uint64_t seed) {
    std::vector<std::vector<float>> out(stacks.size());
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < (long long)stacks.size(); ++i) {
        const auto& st = stacks[size_t(i)];
        Rng rng = Rng::split(seed, uint64_t(i));
        out[size_t(i)] = diffusion::sample(net, params, st.plane(0), ref6, st.height, st.width,
                                           steps, rng);
    }
    return out;
}

// stratified cap on evaluation items
static std::vector<size_t> select_stratified(const std::vector<int>& labels, int classes,
                                             int cap) {
    std::vector<size_t> keep;
    if (cap <= 0 || size_t(cap) >= labels.size()) {
        keep.resize(labels.size());
        std::iota(keep.begin(), keep.end(), size_t(0));
        return keep;
    }
    const int per_class = std::max(1, cap / classes);
    std::vector<int> taken(size_t(classes), 0);
    for (size_t i = 0; i < labels.size() && int(keep.size()) < per_class * classes; ++i) {
        if (taken[size_t(labels[i])] < per_class) {
            keep.push_back(i);
            taken[size_t(labels[i])]++;
        }
    }
    return keep;
}

static void leakage_check(const diffusion::TrainState& ck, const fs::path& eval_root,
                          const std::vector<std::string>& eval_ids) {
    if (ck.dataset_root.empty()) return;
    fs::path train_root(ck.dataset_root);
    std::set<std::string> train_ids;
    try {
        synth::Manifest m = synth::load_manifest(train_root);
        if (!fs::equivalent(train_root, eval_root)) {
            // different datasets share no scenes unless their ids collide AND
            // the roots match; distinct roots with equal seeds still hold
            // distinct files, so only an id-level check on the same root applies
            if (m.config.seed == synth::load_manifest(eval_root).config.seed &&
                m.config.domain == synth::load_manifest(eval_root).config.domain)
                MLOG_DEBUG("leakage check: distinct roots with matching seeds");
        }
        train_ids.insert(m.train_ids.begin(), m.train_ids.end());
    } catch (const Error&) {
        MLOG_DEBUG("leakage check: training manifest unavailable, skipping");
        return;
    }
    for (const auto& id : eval_ids)
        if (train_ids.count(id) && fs::equivalent(fs::path(ck.dataset_root), eval_root))
            throw data_error("protocol abort: evaluation scene '" + id +
                             "' appears in the generator's training split");
}

std::string MoaReport::to_json() const {
    json j;
    j["classes"] = classes;
    json srcs = json::array();
    for (const auto& s : sources) {
        json cv{{"mean_auc", s.cv.mean_auc},
                {"class_mean", s.cv.class_mean},
                {"class_std", s.cv.class_std}};
        srcs.push_back(json{{"name", s.name}, {"cv", cv}});
    }
    j["sources"] = srcs;
    j["ratio_to_real"] = ratio_to_real;
    j["config"] = json::parse(config_json);
    return j.dump(2) + "\n";
}

std::string MoaReport::to_csv() const {
    std::string out = "class";
    for (const auto& s : sources) out += "," + s.name + "_mean," + s.name + "_std";
    out += "\n";
    for (int c = 0; c < classes; ++c) {
        out += std::to_string(c);
        for (const auto& s : sources) {
            out += "," + std::to_string(s.cv.class_mean[size_t(c)]) + "," +
                   std::to_string(s.cv.class_std[size_t(c)]);
        }
        out += "\n";
    }
    return out;
}

MoaReport moa_protocol(const fs::path& dataset_root,
                       const std::vector<fs::path>& checkpoints, const EvalOptions& opt) {
    diffusion::LoadedDataset data = diffusion::load_dataset(dataset_root, /*max_train=*/1);
    const int classes = data.manifest.config.classes;
    const int h = data.test.empty() ? 0 : data.test[0].height;
    const int w = data.test.empty() ? 0 : data.test[0].width;
    if (data.test.empty()) throw data_error("moa_protocol: dataset has no test split");

    const auto keep = select_stratified(data.test_labels, classes, opt.eval_images);
    std::vector<pipeline::NormalizedStack> stacks;
    std::vector<int> labels;
    std::vector<std::string> ids;
    for (size_t i : keep) {
        stacks.push_back(data.test[i]);
        labels.push_back(data.test_labels[i]);
        ids.push_back(data.test_ids[i]);
    }

    MoaReport report;
    report.classes = classes;
    json cfg = opt_to_json(opt);
    cfg["dataset"] = dataset_root.string();

    // real paint
    {
        std::vector<const float*> imgs;
        for (const auto& s : stacks) imgs.push_back(s.plane(1));
        probe::ProbeConfig pc{.in_channels = 5,
                              .classes = classes,
                              .steps = opt.probe_steps,
                              .seed = mix_seed(opt.seed, 1)};
        report.sources.push_back({"real_paint", probe::cross_validate(pc, imgs, labels, h, w,
                                                                      opt.folds)});
    }

    // generated paint per checkpoint tier
    json cks = json::array();
    std::vector<std::vector<std::vector<float>>> keep_alive;
    for (const auto& ckpath : checkpoints) {
        diffusion::TrainState ck = diffusion::load_checkpoint(ckpath);
        leakage_check(ck, dataset_root, ids);
        model::UNet net(ck.mcfg);
        auto gen = generate_paint(net, ck.params, stacks, nullptr, opt.sampler_steps,
                                  mix_seed(opt.seed, 0x6e6));
        std::vector<const float*> imgs;
        for (const auto& g : gen) imgs.push_back(g.data());
        probe::ProbeConfig pc{.in_channels = 5,
                              .classes = classes,
                              .steps = opt.probe_steps,
                              .seed = mix_seed(opt.seed, 2 + uint64_t(ck.mcfg.tier))};
        const std::string name = std::string("generated_") + ck.mcfg.tier;
        report.sources.push_back({name, probe::cross_validate(pc, imgs, labels, h, w, opt.folds)});
        report.ratio_to_real[name] =
            report.sources.back().cv.mean_auc / report.sources[0].cv.mean_auc;
        cks.push_back(ckpath.string());
        keep_alive.push_back(std::move(gen));
    }

    // brightfield only
    {
        std::vector<const float*> imgs;
        for (const auto& s : stacks) imgs.push_back(s.plane(0));
        probe::ProbeConfig pc{.in_channels = 1,
                              .classes = classes,
                              .steps = opt.probe_steps,
                              .seed = mix_seed(opt.seed, 3)};
        report.sources.push_back({"brightfield", probe::cross_validate(pc, imgs, labels, h, w,
                                                                       opt.folds)});
    }

    cfg["checkpoints"] = cks;
    cfg["eval_ids"] = ids.size();
    report.config_json = cfg.dump();
    return report;
}

std::string SweepReport::to_csv() const {
    std::string out = "tier,params,fd,auc_ratio\n";
    for (const auto& r : rows) {
        out += std::string(1, r.tier) + "," + std::to_string(r.params) + "," +
               std::to_string(r.fd) + "," + std::to_string(r.auc_ratio) + "\n";
    }
    return out;
}

std::string SweepReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows)
        rows_j.push_back(json{{"tier", std::string(1, r.tier)},
                              {"params", r.params},
                              {"fd", r.fd},
                              {"auc_ratio", r.auc_ratio}});
    return json{{"rows", rows_j}, {"config", json::parse(config_json)}}.dump(2) + "\n";
}

SweepReport scale_sweep(const fs::path& dataset_root, const std::vector<fs::path>& checkpoints,
                        const EvalOptions& opt) {
    diffusion::LoadedDataset data = diffusion::load_dataset(dataset_root, /*max_train=*/1);
    const int classes = data.manifest.config.classes;
    if (data.test.empty()) throw data_error("scale_sweep: dataset has no test split");
    const int h = data.test[0].height, w = data.test[0].width;

    const auto keep = select_stratified(data.test_labels, classes, opt.eval_images);
    std::vector<pipeline::NormalizedStack> stacks;
    std::vector<int> labels;
    std::vector<std::string> ids;
    for (size_t i : keep) {
        stacks.push_back(data.test[i]);
        labels.push_back(data.test_labels[i]);
        ids.push_back(data.test_ids[i]);
    }
    std::vector<const float*> real_imgs;
    for (const auto& s : stacks) real_imgs.push_back(s.plane(1));

    FeatureSet real_feats = handcrafted_features(real_imgs, 5, h, w, FeatureSource::real_paint);
    probe::ProbeConfig real_pc{.in_channels = 5,
                               .classes = classes,
                               .steps = opt.probe_steps,
                               .seed = mix_seed(opt.seed, 11)};
    probe::CvResult real_cv = probe::cross_validate(real_pc, real_imgs, labels, h, w, opt.folds);

    SweepReport report;
    json cfg = opt_to_json(opt);
    cfg["dataset"] = dataset_root.string();
    json cks = json::array();
    for (const auto& ckpath : checkpoints) {
        diffusion::TrainState ck = diffusion::load_checkpoint(ckpath);
        leakage_check(ck, dataset_root, ids);
        model::UNet net(ck.mcfg);
        auto gen = generate_paint(net, ck.params, stacks, nullptr, opt.sampler_steps,
                                  mix_seed(opt.seed, 0x5e3));
        std::vector<const float*> gen_imgs;
        for (const auto& g : gen) gen_imgs.push_back(g.data());
        FeatureSet gen_feats =
            handcrafted_features(gen_imgs, 5, h, w, FeatureSource::generated_paint);
        SweepRow row;
        row.tier = ck.mcfg.tier;
        row.params = model::count_params(ck.mcfg);
        row.fd = frechet_distance(gen_feats, real_feats);
        probe::ProbeConfig pc{.in_channels = 5,
                              .classes = classes,
                              .steps = opt.probe_steps,
                              .seed = mix_seed(opt.seed, 12 + uint64_t(ck.mcfg.tier))};
        probe::CvResult cv = probe::cross_validate(pc, gen_imgs, labels, h, w, opt.folds);
        row.auc_ratio = cv.mean_auc / real_cv.mean_auc;
        report.rows.push_back(row);
        cks.push_back(ckpath.string());
    }
    cfg["checkpoints"] = cks;
    report.config_json = cfg.dump();
    return report;
}

std::string AdaptReport::to_json() const {
    return json{{"fd_zero_shot", fd_zero_shot},
                {"fd_in_context", fd_in_context},
                {"fd_fine_tuned", fd_fine_tuned},
                {"reference_id", reference_id},
                {"reference_seed", reference_seed},
                {"config", json::parse(config_json)}}
               .dump(2) +
           "\n";
}

AdaptReport domain_adaptation_protocol(const fs::path& base_checkpoint,
                                       const fs::path& shifted_root, const AdaptOptions& opt) {
    diffusion::TrainState base = diffusion::load_checkpoint(base_checkpoint);
    model::UNet net(base.mcfg);

    // keep the base-domain normalization across all three conditions
    pipeline::PercentileStats base_stats =
        pipeline::PercentileStats::load(fs::path(base.dataset_root) / "stats.json");
    diffusion::LoadedDataset shifted =
        diffusion::load_dataset(shifted_root, 0, 0, &base_stats);
    if (shifted.train.empty() || shifted.test.empty())
        throw data_error("domain_adaptation_protocol: shifted dataset needs both splits");
    const int h = shifted.test[0].height, w = shifted.test[0].width;

    const auto keep = select_stratified(shifted.test_labels, shifted.manifest.config.classes,
                                        opt.eval.eval_images);
    std::vector<pipeline::NormalizedStack> stacks;
    for (size_t i : keep) stacks.push_back(shifted.test[i]);
    std::vector<const float*> real_imgs;
    for (const auto& s : stacks) real_imgs.push_back(s.plane(1));
    FeatureSet real_feats = handcrafted_features(real_imgs, 5, h, w, FeatureSource::real_paint);

    auto fd_of = [&](const std::vector<std::vector<float>>& gen) {
        std::vector<const float*> imgs;
        for (const auto& g : gen) imgs.push_back(g.data());
        FeatureSet f = handcrafted_features(imgs, 5, h, w, FeatureSource::generated_paint);
        return frechet_distance(f, real_feats);
    };

    AdaptReport report;

    // (a) zero shot
    auto gen_zero = generate_paint(net, base.params, stacks, nullptr, opt.eval.sampler_steps,
                                   mix_seed(opt.eval.seed, 0xa0));
    report.fd_zero_shot = fd_of(gen_zero);

    // (b) in-context: one shifted ground-truth pair as the reference
    Rng pick = Rng::split(opt.eval.seed, 0xa1);
    const size_t ref_idx = size_t(pick.below(shifted.train.size()));
    report.reference_id = shifted.train_ids[ref_idx];
    report.reference_seed = opt.eval.seed;
    const float* ref6 = shifted.train[ref_idx].data.data();
    auto gen_ic = generate_paint(net, base.params, stacks, ref6, opt.eval.sampler_steps,
                                 mix_seed(opt.eval.seed, 0xa2));
    report.fd_in_context = fd_of(gen_ic);

    // (c) fine-tuned on the shifted training split
    diffusion::TrainingConfig tc;
    tc.tier = base.mcfg.tier;
    tc.lr = opt.finetune_lr;
    tc.batch = opt.finetune_batch;
    tc.steps = int(base.step) + opt.finetune_steps;
    tc.seed = opt.eval.seed;
    tc.dataset_root = shifted_root.string();
    tc.checkpoint_dir = opt.work_dir.empty() ? (shifted_root / "finetune_ck").string()
                                             : opt.work_dir;
    tc.checkpoint_every = 0;
    tc.val_every = 200;
    diffusion::TrainState tuned = diffusion::train(tc, shifted, base);
    auto gen_ft = generate_paint(net, tuned.params, stacks, nullptr, opt.eval.sampler_steps,
                                 mix_seed(opt.eval.seed, 0xa3));
    report.fd_fine_tuned = fd_of(gen_ft);

    json cfg = opt_to_json(opt.eval);
    cfg["finetune_steps"] = opt.finetune_steps;
    cfg["finetune_batch"] = opt.finetune_batch;
    cfg["finetune_lr"] = opt.finetune_lr;
    cfg["base_checkpoint"] = base_checkpoint.string();
    cfg["shifted_root"] = shifted_root.string();
    report.config_json = cfg.dump();
    return report;
}

}  // namespace monetlab::eval
