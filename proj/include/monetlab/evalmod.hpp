#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "monetlab/diffusion.hpp"
#include "monetlab/probe.hpp"
#include "monetlab/tensor.hpp"

namespace monetlab::eval {

// --- RGB compositing ---------------------------------------------------------

// Additive color map over [0,1] paint values: DNA blue, Mito green, RNA red,
// AGP teal, ER yellow; channel sums clamp to [0,1].
Tensor render_rgb01(const float* paint01, int h, int w);
// Wrapper for normalized [-1,1] planes: maps to [0,1] first.
Tensor render_rgb(const float* paint5, int h, int w);
Tensor make_grid(const std::vector<Tensor>& rgbs, int cols);

// --- features ----------------------------------------------------------------

enum class FeatureSource { real_paint, generated_paint, brightfield };
const char* feature_source_name(FeatureSource s);

struct FeatureSet {
    int n = 0, d = 0;
    std::vector<double> data;  // row-major n x d
    FeatureSource source = FeatureSource::real_paint;
    std::string extractor;  // fingerprint; distances require matching extractors

    const double* row(int i) const { return data.data() + size_t(i) * d; }
};

// Per channel: mean, variance, gradient energy, 8-bin histogram -> 11 each.
FeatureSet handcrafted_features(const std::vector<const float*>& images, int channels, int h,
                                int w, FeatureSource source);

FeatureSet probe_feature_set(const probe::Probe& p, const std::vector<const float*>& images,
                             int h, int w, FeatureSource source);

// --- Frechet feature distance --------------------------------------------------

// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), matrix roots via
// eigendecomposition with small negative eigenvalues clamped to zero.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

// Symmetric eigendecomposition (cyclic Jacobi), exposed for reuse and testing.
void sym_eigen(std::vector<double>& a, int n, std::vector<double>& evals,
               std::vector<double>& evecs);

// --- ROC AUC -------------------------------------------------------------------

// Mann-Whitney with half-credit ties via average ranks.
double auc_binary(const std::vector<double>& scores, const std::vector<bool>& positive);

// Per-class one-vs-all AUC of score column k (N x C scores).
std::vector<double> one_vs_all_auc(const std::vector<std::vector<double>>& scores,
                                   const std::vector<int>& labels, int classes);

// --- protocols -----------------------------------------------------------------

struct EvalOptions {
    int eval_images = 300;     // stratified cap on the held-out evaluation set
    int sampler_steps = 50;
    int folds = 10;
    int probe_steps = 220;
    uint64_t seed = 99;
    std::string features = "handcrafted";  // or "probe"
};

struct SourceResult {
    std::string name;
    probe::CvResult cv;
};

struct MoaReport {
    int classes = 0;
    std::vector<SourceResult> sources;            // real_paint, tiers..., brightfield
    std::map<std::string, double> ratio_to_real;  // per generated tier
    std::string config_json;

    std::string to_json() const;
    std::string to_csv() const;  // table-shaped: rows classes, columns sources
};

// Trains probes on real paint, per-tier generated paint, and brightfield over
// the held-out split; aborts if any evaluated scene id appears in the
// generator's training split.
MoaReport moa_protocol(const std::filesystem::path& dataset_root,
                       const std::vector<std::filesystem::path>& checkpoints,
                       const EvalOptions& opt);

struct SweepRow {
    char tier;
    size_t params = 0;
    double fd = 0.0;
    double auc_ratio = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::string config_json;
    std::string to_csv() const;  // tier,params,fd,auc_ratio
    std::string to_json() const;
};

SweepReport scale_sweep(const std::filesystem::path& dataset_root,
                        const std::vector<std::filesystem::path>& checkpoints,
                        const EvalOptions& opt);

struct AdaptReport {
    double fd_zero_shot = 0.0;
    double fd_in_context = 0.0;
    double fd_fine_tuned = 0.0;
    std::string reference_id;
    uint64_t reference_seed = 0;
    std::string config_json;
    std::string to_json() const;
};

struct AdaptOptions {
    EvalOptions eval;
    int finetune_steps = 500;
    int finetune_batch = 8;
    double finetune_lr = 1e-3;
    std::string work_dir;  // fine-tune checkpoints land here
};

AdaptReport domain_adaptation_protocol(const std::filesystem::path& base_checkpoint,
                                       const std::filesystem::path& shifted_root,
                                       const AdaptOptions& opt);

// Shared helper: generated paint for a set of held-out images (no reference
// unless ref6 given); seeds split per image index.
std::vector<std::vector<float>> generate_paint(const model::UNet& net,
                                               const std::vector<float>& params,
                                               const std::vector<pipeline::NormalizedStack>& stacks,
                                               const float* ref6, int steps, uint64_t seed);

}  // namespace monetlab::eval
