#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "monetlab/model.hpp"
#include "monetlab/pipeline.hpp"
#include "monetlab/rng.hpp"
#include "monetlab/synthdata.hpp"

namespace monetlab::diffusion {

// Forward process convention: t = 1 is clean data, t = 0 is pure noise.
//   x_t = t*c + (1-t)*eps
// The training target is the path velocity, v* = c - eps.
void forward_noise(const float* clean, const float* eps, float t, float* out, size_t n);
void flow_target(const float* clean, const float* eps, float* out, size_t n);

struct AdamState {
    std::vector<float> m, v;
    int64_t step = 0;
};

// Adam with bias correction and a global gradient-norm clip applied first.
void adam_update(std::vector<float>& params, std::vector<float>& grads, AdamState& st, double lr,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                 double clip_norm = 1.0);

struct TrainingConfig {
    char tier = 'S';
    double lr = 1e-3;
    int batch = 8;
    int steps = 1500;
    uint64_t seed = 7;
    std::string dataset_root;
    std::string checkpoint_dir;
    int checkpoint_every = 500;
    int val_every = 100;
    int val_examples = 64;
    int dump_every = 0;  // 0 disables sample-grid dumps
    int sample_steps = 50;
    int image_size = 0;  // 0: dataset native size

    std::string to_json() const;
    static TrainingConfig from_json(const std::string& text);
};

struct TrainState {
    model::ModelConfig mcfg;
    std::vector<float> params;
    AdamState opt;
    int64_t step = 0;
    Rng rng;
    std::vector<float> loss_history;
    double last_val_loss = -1.0;
    // provenance used by the evaluation protocols' leakage check
    std::string dataset_root;
    uint64_t dataset_seed = 0;
};

TrainState init_state(const model::ModelConfig& mcfg, uint64_t seed);

// One optimizer step over a batch of paired examples. Per-example t is drawn
// from the 1000-point grid {0..999}/1000, eps fresh standard normal. Returns
// the loss evaluated before the update. Deterministic given the state rng and
// invariant to the thread count.
float training_step(const model::UNet& net, TrainState& state,
                    const std::vector<pipeline::PairedExample>& batch, double lr);

// Loss of the current parameters on fixed pairs with fixed (t, eps) draws.
struct FixedBatch {
    std::vector<pipeline::PairedExample> pairs;
    std::vector<float> ts;
    std::vector<std::vector<float>> eps;
};
FixedBatch make_fixed_batch(const std::vector<pipeline::PairedExample>& pairs, uint64_t seed);
double eval_loss(const model::UNet& net, const std::vector<float>& params, const FixedBatch& fb);
double zero_model_loss(const FixedBatch& fb);

// Euler step loop shared by the sampler and its tests: x <- x + (1/steps) *
// field(x, i/steps) for i = 0..steps-1.
std::vector<float> euler_integrate(
    const std::function<void(const std::vector<float>& x, float t, std::vector<float>& v)>& field,
    std::vector<float> x0, int steps);

// Euler integration of the learned velocity field, 50 steps by default
// everywhere in the artifact. Absent reference = zero planes. Output is the
// raw final state; clamp to [-1,1] only at export.
std::vector<float> sample(const model::UNet& net, const std::vector<float>& params,
                          const float* brightfield, const float* reference6, int h, int w,
                          int steps, Rng& rng);

// --- checkpoints -------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, const model::UNet& net,
                     const TrainState& state, const std::string& note = "");
TrainState load_checkpoint(const std::filesystem::path& dir);

// --- full training loop ------------------------------------------------------

// Preprocessed dataset resident in memory.
struct LoadedDataset {
    synth::Manifest manifest;
    pipeline::PercentileStats stats;
    std::vector<pipeline::NormalizedStack> train;
    std::vector<int> train_labels;
    std::vector<std::string> train_ids;
    std::vector<pipeline::NormalizedStack> test;
    std::vector<int> test_labels;
    std::vector<std::string> test_ids;
};

// stats_override: preprocess with foreign clip bounds (the domain-adaptation
// protocol keeps the base-domain normalization across all conditions).
LoadedDataset load_dataset(const std::filesystem::path& root, int max_train = 0, int max_test = 0,
                           const pipeline::PercentileStats* stats_override = nullptr);

using DumpHook = std::function<void(int64_t step, const model::UNet& net,
                                    const std::vector<float>& params)>;

// Runs the loop with periodic checkpoints, validation logging (JSONL metrics
// file in the checkpoint dir) and optional sample dumps. Returns final state.
TrainState train(const TrainingConfig& cfg, const LoadedDataset& data,
                 std::optional<TrainState> resume = std::nullopt, DumpHook dump = nullptr);

}  // namespace monetlab::diffusion
