// monetlab: brightfield -> virtual paint experiment driver.
// Every subcommand is reproducible from its config + seeds; outputs embed the
// resolved config. MONETLAB_LOG={error,info,debug} controls verbosity.

#include <filesystem>
#include <iostream>
#include <optional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "monetlab/common.hpp"
#include "monetlab/config.hpp"
#include "monetlab/diffusion.hpp"
#include "monetlab/evalmod.hpp"
#include "monetlab/pipeline.hpp"
#include "monetlab/store.hpp"
#include "monetlab/synthdata.hpp"
#include "monetlab/timelapse.hpp"

namespace fs = std::filesystem;
using namespace monetlab;
using nlohmann::json;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out;
    int threads = -1;
};

config::RunConfig resolve_config(const GlobalArgs& g) {
    config::RunConfig cfg =
        g.config_path.empty() ? config::default_config() : config::load_config(g.config_path);
    if (g.seed) {
        cfg.dataset.seed = *g.seed;
        cfg.train.seed = *g.seed;
        cfg.eval.seed = *g.seed;
        cfg.timelapse.seed = *g.seed;
    }
    if (!g.out.empty()) cfg.out = g.out;
    if (g.threads >= 0) cfg.threads = g.threads;
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
    return cfg;
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw data_error("cannot create directory " + p.string());
}

void write_run_config(const fs::path& dir, const config::RunConfig& cfg) {
    ensure_dir(dir);
    store::write_text_file(dir / "run_config.json", cfg.to_json());
}

int cmd_synth(const config::RunConfig& cfg, bool base_only) {
    MLOG_INFO("building dataset at %s", cfg.dataset.root.c_str());
    synth::build_dataset(cfg.dataset);
    if (cfg.shifted_dataset && !base_only) {
        MLOG_INFO("building shifted dataset at %s", cfg.shifted_dataset->root.c_str());
        synth::build_dataset(*cfg.shifted_dataset);
    }
    return 0;
}

int cmd_stats(const config::RunConfig& cfg, const std::string& data_override) {
    const fs::path root(data_override.empty() ? cfg.dataset.root : data_override);
    synth::Manifest m = synth::load_manifest(root);
    // clip bounds come from the training split only
    pipeline::PercentileStats stats = pipeline::compute_stats(root, m.train_ids);
    stats.save(root / "stats.json");
    std::cout << stats.to_json();
    return 0;
}

diffusion::TrainingConfig train_config_for(const config::RunConfig& cfg, char tier) {
    diffusion::TrainingConfig tc = cfg.train;
    tc.tier = tier;
    if (tc.checkpoint_dir.empty() || tc.checkpoint_dir == "runs/S")
        tc.checkpoint_dir = std::string("runs/") + tier;
    return tc;
}

int cmd_train(const config::RunConfig& cfg, char tier, const std::string& resume_path,
              const std::string& data_override, int steps_override) {
    diffusion::TrainingConfig tc = train_config_for(cfg, tier);
    if (!data_override.empty()) tc.dataset_root = data_override;
    if (steps_override > 0) tc.steps = steps_override;
    diffusion::LoadedDataset data = diffusion::load_dataset(tc.dataset_root);
    std::optional<diffusion::TrainState> resume;
    if (!resume_path.empty()) resume = diffusion::load_checkpoint(resume_path);

    auto dump = [&](int64_t step, const model::UNet& net, const std::vector<float>& params) {
        const size_t count = std::min<size_t>(4, data.test.size());
        if (!count) return;
        std::vector<Tensor> tiles;
        for (size_t i = 0; i < count; ++i) {
            Rng rng = Rng::split(tc.seed, 0xd00d + i);
            auto paint = diffusion::sample(net, params, data.test[i].plane(0), nullptr,
                                           data.test[i].height, data.test[i].width,
                                           tc.sample_steps, rng);
            tiles.push_back(eval::render_rgb(paint.data(), data.test[i].height,
                                             data.test[i].width));
            tiles.push_back(eval::render_rgb(data.test[i].plane(1), data.test[i].height,
                                             data.test[i].width));
        }
        const fs::path dir = fs::path(tc.checkpoint_dir) / "samples";
        ensure_dir(dir);
        char buf[48];
        std::snprintf(buf, sizeof buf, "step_%06lld.png", (long long)step);
        store::export_png(eval::make_grid(tiles, 2), dir / buf);
    };

    diffusion::train(tc, data, resume, dump);
    std::cout << "checkpoint: " << (fs::path(tc.checkpoint_dir) / "final").string() << "\n";
    return 0;
}

int cmd_sample(const config::RunConfig& cfg, const std::string& ckpt, int count,
               const std::string& reference_mode, int steps_override) {
    diffusion::TrainState ck = diffusion::load_checkpoint(ckpt);
    model::UNet net(ck.mcfg);
    diffusion::LoadedDataset data = diffusion::load_dataset(ck.dataset_root, 1, count);
    const int steps = steps_override > 0 ? steps_override : cfg.timelapse.steps;
    const fs::path outdir = fs::path(cfg.out) / "samples";
    write_run_config(outdir, cfg);

    const float* ref6 = nullptr;
    if (reference_mode == "incontext") {
        if (data.test.empty()) throw data_error("sample: no held-out images");
        ref6 = data.test[0].data.data();
    } else if (reference_mode != "none") {
        throw usage_error("sample: --reference must be none or incontext");
    }

    for (int i = 0; i < count && size_t(i) < data.test.size(); ++i) {
        const auto& st = data.test[size_t(i)];
        Rng rng = Rng::split(cfg.eval.seed, uint64_t(i));
        auto paint = diffusion::sample(net, ck.params, st.plane(0), ref6, st.height, st.width,
                                       steps, rng);
        Tensor t({5, uint32_t(st.height), uint32_t(st.width)});
        t.data.assign(paint.begin(), paint.end());
        for (auto& v : t.data) v = std::clamp(v, -1.f, 1.f);
        char buf[64];
        std::snprintf(buf, sizeof buf, "gen_%04d", i);
        store::write_tensor(outdir / (std::string(buf) + ".mst"), t);
        std::vector<Tensor> tiles{eval::render_rgb(paint.data(), st.height, st.width),
                                  eval::render_rgb(st.plane(1), st.height, st.width)};
        store::export_png(eval::make_grid(tiles, 2), outdir / (std::string(buf) + ".png"));
    }
    std::cout << "samples written to " << outdir.string() << "\n";
    return 0;
}

// hash a string id into a seed stream
uint64_t splitmix64_id(const std::string& s) {
    uint64_t h = 0x99ULL;
    for (char c : s) h = splitmix64(h ^= uint64_t(uint8_t(c)));
    return h;
}

int cmd_timelapse(const config::RunConfig& cfg, const std::string& ckpt,
                  const std::string& mode, const std::string& seq_filter) {
    if (mode != "consistent" && mode != "independent")
        throw usage_error("timelapse: --mode must be consistent or independent");
    diffusion::TrainState ck = diffusion::load_checkpoint(ckpt);
    model::UNet net(ck.mcfg);
    const fs::path root(ck.dataset_root);
    synth::Manifest m = synth::load_manifest(root);
    pipeline::PercentileStats stats = pipeline::PercentileStats::load(root / "stats.json");
    const fs::path outdir = fs::path(cfg.out) / ("timelapse_" + mode);
    write_run_config(outdir, cfg);

    json index;
    index["mode"] = mode;
    index["checkpoint"] = ckpt;
    json seqs = json::array();
    for (const auto& seq : m.sequences) {
        if (!seq_filter.empty() && seq.id != seq_filter) continue;
        int nframes = int(seq.frames.size());
        if (cfg.timelapse.frames_per_sequence > 0)
            nframes = std::min(nframes, cfg.timelapse.frames_per_sequence);
        std::vector<std::vector<float>> bf(size_t(nframes));
        int h = 0, w = 0;
        for (int f = 0; f < nframes; ++f) {
            auto norm = pipeline::preprocess(synth::load_stack(root, seq.frames[size_t(f)]), stats);
            h = norm.height;
            w = norm.width;
            bf[size_t(f)].assign(norm.plane(0), norm.plane(0) + size_t(h) * w);
        }
        const uint64_t seed = mix_seed(cfg.timelapse.seed, splitmix64_id(seq.id));
        auto frames = mode == "consistent"
                          ? timelapse::generate_consistent(net, ck.params, bf, h, w,
                                                           cfg.timelapse.steps, seed,
                                                           cfg.timelapse.chain_previous)
                          : timelapse::generate_independent(net, ck.params, bf, h, w,
                                                            cfg.timelapse.steps, seed);
        const fs::path sdir = outdir / seq.id;
        ensure_dir(sdir);
        for (int f = 0; f < nframes; ++f) {
            Tensor t({5, uint32_t(h), uint32_t(w)});
            t.data.assign(frames[size_t(f)].begin(), frames[size_t(f)].end());
            for (auto& v : t.data) v = std::clamp(v, -1.f, 1.f);
            char buf[32];
            std::snprintf(buf, sizeof buf, "f%04d", f);
            store::write_tensor(sdir / (std::string(buf) + ".mst"), t);
            store::export_png(eval::render_rgb(frames[size_t(f)].data(), h, w),
                              sdir / (std::string(buf) + ".png"));
        }
        auto mse = timelapse::frame_mse(frames, h, w);
        seqs.push_back(json{{"id", seq.id}, {"frames", nframes}, {"mean_adjacent_mse", mse.mean}});
        MLOG_INFO("%s %s: mean adjacent MSE %.5f", mode.c_str(), seq.id.c_str(), mse.mean);
    }
    index["sequences"] = seqs;
    store::write_text_file(outdir / "index.json", index.dump(2) + "\n");
    std::cout << outdir.string() << "\n";
    return 0;
}

int cmd_eval_consistency(const config::RunConfig& cfg, const std::string& consistent_dir,
                         const std::string& independent_dir) {
    auto load_mode = [&](const fs::path& dir) {
        std::vector<timelapse::FrameMse> seqs;
        std::vector<std::string> names;
        std::vector<fs::path> sdirs;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_directory()) sdirs.push_back(e.path());
        std::sort(sdirs.begin(), sdirs.end());
        for (const auto& sdir : sdirs) {
            std::vector<fs::path> frames;
            for (const auto& f : fs::directory_iterator(sdir))
                if (f.path().extension() == ".mst") frames.push_back(f.path());
            std::sort(frames.begin(), frames.end());
            if (frames.size() < 2) continue;
            std::vector<std::vector<float>> paint;
            int h = 0, w = 0;
            for (const auto& f : frames) {
                Tensor t = store::read_tensor(f);
                h = int(t.dims[1]);
                w = int(t.dims[2]);
                paint.push_back(t.data);
            }
            seqs.push_back(timelapse::frame_mse(paint, h, w));
            names.push_back(sdir.filename().string());
        }
        return std::pair{seqs, names};
    };
    auto [cons, cons_names] = load_mode(consistent_dir);
    auto [indep, indep_names] = load_mode(independent_dir);
    auto cs = timelapse::corpus_mse(cons);
    auto is = timelapse::corpus_mse(indep);

    std::string csv = "sequence,mode,mean_adjacent_mse\n";
    for (size_t i = 0; i < cons.size(); ++i)
        csv += cons_names[i] + ",consistent," + std::to_string(cons[i].mean) + "\n";
    for (size_t i = 0; i < indep.size(); ++i)
        csv += indep_names[i] + ",independent," + std::to_string(indep[i].mean) + "\n";
    const fs::path outdir(cfg.out);
    ensure_dir(outdir);
    store::write_text_file(outdir / "consistency.csv", csv);
    json summary{{"consistent_mean", cs.mean},
                 {"consistent_stderr", cs.stderr_mean},
                 {"independent_mean", is.mean},
                 {"independent_stderr", is.stderr_mean},
                 {"gap", is.mean - cs.mean}};
    store::write_text_file(outdir / "consistency_summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_eval_moa(const config::RunConfig& cfg, const std::vector<std::string>& ckpts,
                 const std::string& data_override) {
    const fs::path root(data_override.empty() ? cfg.dataset.root : data_override);
    std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
    eval::MoaReport report = eval::moa_protocol(root, paths, cfg.eval);
    const fs::path outdir(cfg.out);
    ensure_dir(outdir);
    store::write_text_file(outdir / "moa_report.json", report.to_json());
    store::write_text_file(outdir / "moa_report.csv", report.to_csv());
    std::cout << report.to_json();
    return 0;
}

int cmd_eval_fd(const config::RunConfig& cfg, const std::string& ckpt,
                const std::string& data_override) {
    diffusion::TrainState ck = diffusion::load_checkpoint(ckpt);
    const fs::path root(data_override.empty() ? ck.dataset_root : data_override);
    std::vector<fs::path> paths{ckpt};
    eval::SweepReport rep = eval::scale_sweep(root, paths, cfg.eval);
    const fs::path outdir(cfg.out);
    ensure_dir(outdir);
    store::write_text_file(outdir / "fd_report.json", rep.to_json());
    std::cout << rep.to_json();
    return 0;
}

int cmd_scale_sweep(const config::RunConfig& cfg, const std::vector<std::string>& ckpts,
                    const std::string& data_override) {
    const fs::path root(data_override.empty() ? cfg.dataset.root : data_override);
    std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
    eval::SweepReport rep = eval::scale_sweep(root, paths, cfg.eval);
    const fs::path outdir(cfg.out);
    ensure_dir(outdir);
    store::write_text_file(outdir / "scale_sweep.csv", rep.to_csv());
    store::write_text_file(outdir / "scale_sweep.json", rep.to_json());
    std::cout << rep.to_csv();
    return 0;
}

int cmd_adapt(const config::RunConfig& cfg, const std::string& ckpt,
              const std::string& shifted_override) {
    const std::string shifted = !shifted_override.empty()
                                    ? shifted_override
                                    : (cfg.shifted_dataset ? cfg.shifted_dataset->root : "");
    if (shifted.empty()) throw usage_error("adapt: no shifted dataset configured");
    eval::AdaptOptions opt = cfg.adapt;
    opt.eval = cfg.eval;
    if (opt.work_dir.empty()) opt.work_dir = (fs::path(cfg.out) / "adapt_finetune").string();
    eval::AdaptReport rep = eval::domain_adaptation_protocol(ckpt, shifted, opt);
    const fs::path outdir(cfg.out);
    ensure_dir(outdir);
    store::write_text_file(outdir / "adapt_report.json", rep.to_json());
    std::cout << rep.to_json();
    return 0;
}

int cmd_render(const config::RunConfig& cfg, const std::string& data_override,
               const std::string& id, const std::string& mst_path, const std::string& out_png) {
    Tensor paint;
    if (!mst_path.empty()) {
        paint = store::read_tensor(mst_path);
        if (paint.dims.size() != 3 || paint.dims[0] != 5)
            throw data_error("render: expected a 5xHxW paint tensor");
    } else {
        const fs::path root(data_override.empty() ? cfg.dataset.root : data_override);
        synth::Manifest m = synth::load_manifest(root);
        pipeline::PercentileStats stats = pipeline::PercentileStats::load(root / "stats.json");
        auto norm = pipeline::preprocess(synth::load_stack(root, id), stats);
        paint = Tensor({5, uint32_t(norm.height), uint32_t(norm.width)});
        std::copy(norm.plane(1), norm.plane(1) + paint.element_count(), paint.data.begin());
    }
    const fs::path out = out_png.empty() ? fs::path(cfg.out) / "render.png" : fs::path(out_png);
    ensure_dir(out.parent_path().empty() ? "." : out.parent_path());
    store::export_png(eval::render_rgb(paint.data.data(), int(paint.dims[1]), int(paint.dims[2])),
                      out);
    std::cout << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"monetlab: reference-consistent virtual staining on synthetic microscopy"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON run config (defaults used when absent)");
    uint64_t seed_val = 0;
    auto* seed_opt = app.add_option("--seed", seed_val, "override every seed in the config");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--threads", g.threads, "worker threads (1 = fully serial)");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "build the synthetic datasets");
    bool base_only = false;
    synth_cmd->add_flag("--base-only", base_only, "skip the shifted-domain dataset");

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "compute percentile clip bounds");
    std::string stats_data;
    stats_cmd->add_option("--data", stats_data, "dataset root (default: config dataset)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model tier");
    std::string tier = "S", resume_path, train_data;
    int train_steps = 0;
    train_cmd->add_option("--tier", tier, "model tier S|M|L")->check(CLI::IsMember({"S", "M", "L"}));
    train_cmd->add_option("--resume", resume_path, "checkpoint directory to resume from");
    train_cmd->add_option("--data", train_data, "dataset root override");
    train_cmd->add_option("--steps", train_steps, "step-count override");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "single-image generation + composites");
    std::string sample_ckpt, reference_mode = "none";
    int sample_count = 8, sample_steps = 0;
    sample_cmd->add_option("--ckpt", sample_ckpt, "checkpoint directory")->required();
    sample_cmd->add_option("--count", sample_count, "number of held-out images");
    sample_cmd->add_option("--steps", sample_steps, "sampler steps (default from config)");
    sample_cmd->add_option("--reference", reference_mode, "none|incontext");

    // timelapse
    auto* tl_cmd = app.add_subcommand("timelapse", "generate a timelapse corpus");
    std::string tl_ckpt, tl_mode = "consistent", tl_seq;
    tl_cmd->add_option("--ckpt", tl_ckpt, "checkpoint directory")->required();
    tl_cmd->add_option("--mode", tl_mode, "consistent|independent")->required();
    tl_cmd->add_option("--sequence", tl_seq, "restrict to one sequence id");

    // eval-moa
    auto* moa_cmd = app.add_subcommand("eval-moa", "probe-classifier evaluation per source");
    std::vector<std::string> moa_ckpts;
    std::string moa_data;
    moa_cmd->add_option("--ckpt", moa_ckpts, "checkpoint directory (repeatable)")->required();
    moa_cmd->add_option("--data", moa_data, "dataset root override");

    // eval-fd
    auto* fd_cmd = app.add_subcommand("eval-fd", "Frechet feature distance vs held-out set");
    std::string fd_ckpt, fd_data;
    fd_cmd->add_option("--ckpt", fd_ckpt, "checkpoint directory")->required();
    fd_cmd->add_option("--data", fd_data, "dataset root override");

    // eval-consistency
    auto* cons_cmd = app.add_subcommand("eval-consistency", "adjacent-frame MSE comparison");
    std::string cons_dir, indep_dir;
    cons_cmd->add_option("--consistent", cons_dir, "consistent timelapse dir")->required();
    cons_cmd->add_option("--independent", indep_dir, "independent timelapse dir")->required();

    // scale-sweep
    auto* sweep_cmd = app.add_subcommand("scale-sweep", "FD and AUC ratio across tiers");
    std::vector<std::string> sweep_ckpts;
    std::string sweep_data;
    sweep_cmd->add_option("--ckpt", sweep_ckpts, "checkpoint directory (repeatable)")->required();
    sweep_cmd->add_option("--data", sweep_data, "dataset root override");

    // adapt
    auto* adapt_cmd = app.add_subcommand("adapt", "zero-shot / in-context / fine-tune comparison");
    std::string adapt_ckpt, adapt_shifted;
    adapt_cmd->add_option("--ckpt", adapt_ckpt, "base checkpoint directory")->required();
    adapt_cmd->add_option("--shifted", adapt_shifted, "shifted dataset root override");

    // render
    auto* render_cmd = app.add_subcommand("render", "composite a paint stack to PNG");
    std::string render_data, render_id, render_mst, render_out;
    render_cmd->add_option("--data", render_data, "dataset root");
    render_cmd->add_option("--id", render_id, "scene id");
    render_cmd->add_option("--mst", render_mst, "generated 5xHxW paint tensor");
    render_cmd->add_option("--png", render_out, "output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // CLI11 prints usage; --help exits 0
    }

    try {
        if (*seed_opt) g.seed = seed_val;
        config::RunConfig cfg = resolve_config(g);
        if (*synth_cmd) return cmd_synth(cfg, base_only);
        if (*stats_cmd) return cmd_stats(cfg, stats_data);
        if (*train_cmd) return cmd_train(cfg, tier[0], resume_path, train_data, train_steps);
        if (*sample_cmd) return cmd_sample(cfg, sample_ckpt, sample_count, reference_mode,
                                           sample_steps);
        if (*tl_cmd) return cmd_timelapse(cfg, tl_ckpt, tl_mode, tl_seq);
        if (*moa_cmd) return cmd_eval_moa(cfg, moa_ckpts, moa_data);
        if (*fd_cmd) return cmd_eval_fd(cfg, fd_ckpt, fd_data);
        if (*cons_cmd) return cmd_eval_consistency(cfg, cons_dir, indep_dir);
        if (*sweep_cmd) return cmd_scale_sweep(cfg, sweep_ckpts, sweep_data);
        if (*adapt_cmd) return cmd_adapt(cfg, adapt_ckpt, adapt_shifted);
        if (*render_cmd) return cmd_render(cfg, render_data, render_id, render_mst, render_out);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const Error& e) {
        MLOG_ERROR("%s", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        MLOG_ERROR("unexpected: %s", e.what());
        return 2;
    }
}
