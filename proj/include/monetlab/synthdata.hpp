#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "monetlab/rng.hpp"
#include "monetlab/tensor.hpp"

namespace monetlab::synth {

// Paint channel order is fixed everywhere: DNA, RNA, ER, AGP, Mito.
enum PaintChannel { kDNA = 0, kRNA = 1, kER = 2, kAGP = 3, kMito = 4 };
constexpr int kPaintChannels = 5;
constexpr const char* kPaintNames[kPaintChannels] = {"dna", "rna", "er", "agp", "mito"};
constexpr int kDefaultClasses = 6;

enum class Domain { base, shifted };

inline const char* domain_name(Domain d) { return d == Domain::base ? "base" : "shifted"; }
Domain parse_domain(const std::string& s);

struct IlluminationField {
    float gx = 0.f, gy = 0.f;   // linear gradient per unit canvas
    float vignette = 0.f;       // radial falloff strength
    float blur_sigma = 0.7f;    // optics blur, pixels
    float contrast = 1.f;
    float level = 1.f;
    bool operator==(const IlluminationField&) const = default;
};

struct Cell {
    float cx = 0.f, cy = 0.f;        // center, pixels
    float vx = 0.f, vy = 0.f;        // velocity, pixels/frame
    float nuc_a = 3.f, nuc_b = 2.f;  // nucleus semi-axes
    float nuc_angle = 0.f;
    float cyto_r = 8.f;
    std::array<uint64_t, kPaintChannels> organelle_seeds{};
    float growth_rate = 0.f;
};

struct SynthScene {
    uint64_t seed = 0;
    std::vector<Cell> cells;
    IlluminationField illumination;
    Domain domain = Domain::base;
    int perturbation_class = 0;
    int frame_index = 0;
    int class_count = kDefaultClasses;
    int height = 64, width = 64;
};

// One field of view: brightfield plane + 5 paint planes, raw intensities >= 0.
struct StainStack {
    int height = 0, width = 0;
    std::vector<float> brightfield;  // height*width
    std::vector<float> paint;        // kPaintChannels * height * width

    float& paint_at(int c, int y, int x) { return paint[(size_t(c) * height + y) * width + x]; }
    float paint_at(int c, int y, int x) const {
        return paint[(size_t(c) * height + y) * width + x];
    }
};

// Deterministic in every argument. Perturbation classes modulate morphology
// with a designed detectability spread: class 1 changes geometry visible in
// brightfield, classes 2-4 mostly move paint-channel texture, class 5 shrinks
// and rounds cells. The shifted domain tilts illumination, widens the optics
// blur 1.6x and drops contrast to 0.8x.
SynthScene gen_scene(uint64_t rng_seed, int perturbation_class, Domain domain,
                     int class_count = kDefaultClasses, int height = 64, int width = 64);

StainStack render(const SynthScene& scene);

// Translate by velocity with wraparound, apply growth, split cells that cross
// the division radius. Per-frame displacement stays <= 3 px.
SynthScene advance(const SynthScene& scene);

struct DatasetConfig {
    std::string root;
    int n_train = 4000;
    int n_test = 800;
    int classes = kDefaultClasses;
    int height = 64, width = 64;
    uint64_t seed = 1;
    Domain domain = Domain::base;
    int timelapse_sequences = 10;
    int timelapse_frames = 200;
};

struct SequenceEntry {
    std::string id;
    std::vector<std::string> frames;  // scene ids in temporal order
};

struct Manifest {
    DatasetConfig config;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::vector<SequenceEntry> sequences;
    std::vector<int> class_counts;  // over train+test
};

struct SceneMeta {
    std::string id;
    int perturbation_class = 0;
    Domain domain = Domain::base;
    int frame_index = 0;
    std::string sequence;  // empty for still images
    std::string split;     // train | test | timelapse
    uint64_t seed = 0;
};

// Writes manifest.json plus scenes/<id>/{bf.mst,paint.mst,meta.json}.
// Byte-reproducible from (config, seed).
void build_dataset(const DatasetConfig& cfg);

Manifest load_manifest(const std::filesystem::path& root);
SceneMeta load_meta(const std::filesystem::path& root, const std::string& id);
StainStack load_stack(const std::filesystem::path& root, const std::string& id);
void save_stack(const std::filesystem::path& dir, const StainStack& s);

Tensor stack_to_tensor(const StainStack& s);  // 6 x H x W, channel 0 brightfield

}  // namespace monetlab::synth
