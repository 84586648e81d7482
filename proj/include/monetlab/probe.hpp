#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "monetlab/rng.hpp"

namespace monetlab::probe {

// Small CNN classifier (~40-50K params): three stride-2 conv stages, global
// mean pool, linear head. Stands in for the paper-scale classifier in every
// protocol; its pooled penultimate activations double as a learned feature
// extractor.
struct ProbeConfig {
    int in_channels = 5;
    int classes = 6;
    int c1 = 24, c2 = 48, c3 = 64;
    int steps = 220;
    int batch = 32;
    double lr = 2e-3;
    uint64_t seed = 1;
};

struct Probe {
    ProbeConfig cfg;
    std::vector<float> params;
    std::string fingerprint;  // identifies the trained extractor

    size_t param_count() const { return params.size(); }
};

size_t probe_param_count(const ProbeConfig& cfg);

// images: per-image plane data, in_channels * h * w each, values roughly [-1,1]
Probe train_probe(const ProbeConfig& cfg, const std::vector<const float*>& images,
                  const std::vector<int>& labels, int h, int w);

// softmax class scores for one image
std::vector<double> probe_scores(const Probe& p, const float* image, int h, int w);

// pooled penultimate features (length cfg.c3)
std::vector<double> probe_features(const Probe& p, const float* image, int h, int w);

// Stratified k-fold assignment, deterministic: fold id per item.
std::vector<int> stratified_folds(const std::vector<int>& labels, int classes, int folds);

struct CvResult {
    int classes = 0, folds = 0;
    // [fold][class] AUC of the fold's held-out scores
    std::vector<std::vector<double>> fold_auc;
    std::vector<double> class_mean, class_std;
    double mean_auc = 0.0;
};

// k-fold cross-validated one-vs-all AUC of probes trained per fold.
CvResult cross_validate(const ProbeConfig& cfg, const std::vector<const float*>& images,
                        const std::vector<int>& labels, int h, int w, int folds);

}  // namespace monetlab::probe
