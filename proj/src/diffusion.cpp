#include "monetlab/diffusion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"
#include "monetlab/common.hpp"
#include "monetlab/store.hpp"

namespace monetlab::diffusion {

namespace fs = std::filesystem;
using nlohmann::json;

void forward_noise(const float* clean, const float* eps, float t, float* out, size_t n) {
    if (t < 0.f || t > 1.f) throw usage_error("forward_noise: t outside [0,1]");
    for (size_t i = 0; i < n; ++i) out[i] = t * clean[i] + (1.f - t) * eps[i];
}

void flow_target(const float* clean, const float* eps, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = clean[i] - eps[i];
}

void adam_update(std::vector<float>& params, std::vector<float>& grads, AdamState& st, double lr,
                 double beta1, double beta2, double eps, double clip_norm) {
    const size_t n = params.size();
    if (st.m.size() != n) {
        st.m.assign(n, 0.f);
        st.v.assign(n, 0.f);
    }
    if (clip_norm > 0) {
        double sq = 0.0;
        for (size_t i = 0; i < n; ++i) sq += double(grads[i]) * double(grads[i]);
        const double norm = std::sqrt(sq);
        if (norm > clip_norm) {
            const float s = float(clip_norm / norm);
            for (size_t i = 0; i < n; ++i) grads[i] *= s;
        }
    }
    st.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(beta2, double(st.step));
    for (size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        const double m = beta1 * st.m[i] + (1.0 - beta1) * g;
        const double v = beta2 * st.v[i] + (1.0 - beta2) * g * g;
        st.m[i] = float(m);
        st.v[i] = float(v);
        params[i] -= float(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
}

TrainState init_state(const model::ModelConfig& mcfg, uint64_t seed) {
    TrainState st;
    st.mcfg = mcfg;
    st.params = model::init_params(mcfg, seed);
    st.opt.m.assign(st.params.size(), 0.f);
    st.opt.v.assign(st.params.size(), 0.f);
    st.rng = Rng::split(seed, 0x7ea1);
    return st;
}

// assemble the 12-channel input: [bf | x_t (5) | reference (6)]
static void assemble_input(const float* bf, const float* xt, const float* ref6, size_t n,
                           float* out) {
    std::copy(bf, bf + n, out);
    std::copy(xt, xt + 5 * n, out + n);
    if (ref6)
        std::copy(ref6, ref6 + 6 * n, out + 6 * n);
    else
        std::fill(out + 6 * n, out + 12 * n, 0.f);
}

float training_step(const model::UNet& net, TrainState& state,
                    const std::vector<pipeline::PairedExample>& batch, double lr) {
    if (batch.empty()) throw usage_error("training_step: empty batch");
    const int h = batch[0].target.height, w = batch[0].target.width;
    for (const auto& ex : batch)
        if (ex.target.height != h || ex.target.width != w)
            throw data_error("training_step: batch examples disagree on size");
    const size_t n = size_t(h) * w;
    const size_t bsz = batch.size();
    const size_t pcount = net.param_count();

    // draw per-example (t, eps) serially so the rng stream is well defined
    std::vector<float> ts(bsz);
    std::vector<std::vector<float>> epss(bsz);
    for (size_t i = 0; i < bsz; ++i) {
        ts[i] = float(state.rng.below(1000)) / 1000.f;
        epss[i].resize(5 * n);
        for (auto& v : epss[i]) v = float(state.rng.normal());
    }

    std::vector<std::vector<float>> item_grads(bsz);
    std::vector<double> item_loss(bsz, 0.0);
#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
#else
    const int max_threads = 1;
#endif
    std::vector<model::Workspace<float>> wss(static_cast<size_t>(max_threads));

#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < (long long)bsz; ++ii) {
        const size_t i = size_t(ii);
#ifdef _OPENMP
        model::Workspace<float>& ws = wss[size_t(omp_get_thread_num())];
#else
        model::Workspace<float>& ws = wss[0];
#endif
        if (ws.h != h || ws.w != w) net.alloc_workspace(ws, h, w);
        const auto& ex = batch[i];
        const float* bf = ex.target.plane(0);
        const float* clean = ex.target.plane(1);  // 5 paint planes
        std::vector<float> xt(5 * n), vstar(5 * n), input(12 * n), out(5 * n), gout(5 * n);
        forward_noise(clean, epss[i].data(), ts[i], xt.data(), 5 * n);
        flow_target(clean, epss[i].data(), vstar.data(), 5 * n);
        assemble_input(bf, xt.data(), ex.reference.data.data(), n, input.data());
        net.forward(state.params.data(), input.data(), ts[i], ws, out.data());
        double L = 0.0;
        const double inv = 1.0 / double(5 * n);
        for (size_t j = 0; j < 5 * n; ++j) {
            const double d = double(out[j]) - double(vstar[j]);
            L += d * d;
            gout[j] = float(2.0 * d * inv / double(bsz));
        }
        item_loss[i] = L * inv;
        item_grads[i].assign(pcount, 0.f);
        net.backward(state.params.data(), ws, gout.data(), item_grads[i].data());
    }

    // fixed-order reduction: results do not depend on the thread count
    double loss = 0.0;
    for (size_t i = 0; i < bsz; ++i) loss += item_loss[i];
    loss /= double(bsz);
    std::vector<float> grads(pcount, 0.f);
    for (size_t i = 0; i < bsz; ++i) {
        const float* g = item_grads[i].data();
        for (size_t j = 0; j < pcount; ++j) grads[j] += g[j];
    }

    if (!std::isfinite(loss)) throw numeric_error("training_step: non-finite loss");
    adam_update(state.params, grads, state.opt, lr);
    state.step += 1;
    state.loss_history.push_back(float(loss));
    return float(loss);
}

FixedBatch make_fixed_batch(const std::vector<pipeline::PairedExample>& pairs, uint64_t seed) {
    FixedBatch fb;
    fb.pairs = pairs;
    Rng rng = Rng::split(seed, 0xf1eb);
    for (size_t i = 0; i < pairs.size(); ++i) {
        fb.ts.push_back(float(rng.below(1000)) / 1000.f);
        const size_t n = size_t(pairs[i].target.height) * pairs[i].target.width;
        std::vector<float> eps(5 * n);
        for (auto& v : eps) v = float(rng.normal());
        fb.eps.push_back(std::move(eps));
    }
    return fb;
}

double eval_loss(const model::UNet& net, const std::vector<float>& params, const FixedBatch& fb) {
    if (fb.pairs.empty()) return 0.0;
    const int h = fb.pairs[0].target.height, w = fb.pairs[0].target.width;
    const size_t n = size_t(h) * w;
#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
#else
    const int max_threads = 1;
#endif
    std::vector<model::Workspace<float>> wss(static_cast<size_t>(max_threads));
    std::vector<double> losses(fb.pairs.size(), 0.0);
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < (long long)fb.pairs.size(); ++ii) {
        const size_t i = size_t(ii);
#ifdef _OPENMP
        model::Workspace<float>& ws = wss[size_t(omp_get_thread_num())];
#else
        model::Workspace<float>& ws = wss[0];
#endif
        if (ws.h != h || ws.w != w) net.alloc_workspace(ws, h, w);
        const auto& ex = fb.pairs[i];
        std::vector<float> xt(5 * n), vstar(5 * n), input(12 * n), out(5 * n);
        forward_noise(ex.target.plane(1), fb.eps[i].data(), fb.ts[i], xt.data(), 5 * n);
        flow_target(ex.target.plane(1), fb.eps[i].data(), vstar.data(), 5 * n);
        assemble_input(ex.target.plane(0), xt.data(), ex.reference.data.data(), n, input.data());
        net.forward(params.data(), input.data(), fb.ts[i], ws, out.data());
        double L = 0.0;
        for (size_t j = 0; j < 5 * n; ++j) {
            const double d = double(out[j]) - double(vstar[j]);
            L += d * d;
        }
        losses[i] = L / double(5 * n);
    }
    double sum = 0.0;
    for (double v : losses) sum += v;
    return sum / double(fb.pairs.size());
}

double zero_model_loss(const FixedBatch& fb) {
    double sum = 0.0;
    for (size_t i = 0; i < fb.pairs.size(); ++i) {
        const size_t n5 = fb.eps[i].size();
        const float* clean = fb.pairs[i].target.plane(1);
        double L = 0.0;
        for (size_t j = 0; j < n5; ++j) {
            const double d = double(clean[j]) - double(fb.eps[i][j]);
            L += d * d;
        }
        sum += L / double(n5);
    }
    return fb.pairs.empty() ? 0.0 : sum / double(fb.pairs.size());
}

std::vector<float> euler_integrate(
    const std::function<void(const std::vector<float>& x, float t, std::vector<float>& v)>& field,
    std::vector<float> x0, int steps) {
    if (steps < 1) throw usage_error("euler_integrate: steps must be >= 1");
    std::vector<float> x = std::move(x0);
    std::vector<float> v(x.size());
    const float dt = 1.f / float(steps);
    for (int i = 0; i < steps; ++i) {
        field(x, float(i) / float(steps), v);
        for (size_t j = 0; j < x.size(); ++j) x[j] += dt * v[j];
    }
    return x;
}

std::vector<float> sample(const model::UNet& net, const std::vector<float>& params,
                          const float* brightfield, const float* reference6, int h, int w,
                          int steps, Rng& rng) {
    const size_t n = size_t(h) * w;
    std::vector<float> x0(5 * n);
    for (auto& v : x0) v = float(rng.normal());
    model::Workspace<float> ws;
    net.alloc_workspace(ws, h, w);
    std::vector<float> input(12 * n);
    auto field = [&](const std::vector<float>& x, float t, std::vector<float>& v) {
        assemble_input(brightfield, x.data(), reference6, n, input.data());
        net.forward(params.data(), input.data(), t, ws, v.data());
    };
    return euler_integrate(field, std::move(x0), steps);
}

// --- checkpoints -------------------------------------------------------------

static json mcfg_to_json(const model::ModelConfig& c) {
    return json{{"tier", std::string(1, c.tier)},
                {"base_width", c.base_width},
                {"depth_mult", {c.depth_mult[0], c.depth_mult[1], c.depth_mult[2]}},
                {"attention_heads", c.attention_heads},
                {"time_embed_dim", c.time_embed_dim},
                {"group_count", c.group_count}};
}

static model::ModelConfig mcfg_from_json(const json& j) {
    model::ModelConfig c;
    const std::string tier = j.at("tier").get<std::string>();
    if (tier.size() != 1) throw data_error("checkpoint header: bad tier field");
    c.tier = tier[0];
    c.base_width = j.at("base_width").get<int>();
    const auto& dm = j.at("depth_mult");
    c.depth_mult = {dm.at(0).get<int>(), dm.at(1).get<int>(), dm.at(2).get<int>()};
    c.attention_heads = j.at("attention_heads").get<int>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.group_count = j.at("group_count").get<int>();
    c.validate();
    return c;
}

void save_checkpoint(const fs::path& dir, const model::UNet& net, const TrainState& state,
                     const std::string& note) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw data_error("save_checkpoint: cannot create " + dir.string());
    const auto& layout = net.layout();

    json header;
    header["format"] = "monetlab-checkpoint-v1";
    header["config"] = mcfg_to_json(state.mcfg);
    header["step"] = state.step;
    header["rng"] = state.rng.state_hex();
    header["adam_step"] = state.opt.step;
    header["metrics"] = json{{"last_loss", state.loss_history.empty()
                                               ? -1.0
                                               : double(state.loss_history.back())},
                             {"val_loss", state.last_val_loss}};
    header["dataset"] = json{{"root", state.dataset_root}, {"seed", state.dataset_seed}};
    if (!note.empty()) header["note"] = note;
    json names = json::array();
    for (const auto& ts : layout.tensors) names.push_back(ts.name);
    header["tensors"] = names;
    store::write_text_file(dir / "header.json", header.dump(2) + "\n");

    int idx = 0;
    for (const auto& ts : layout.tensors) {
        Tensor t(ts.dims);
        std::copy(state.params.begin() + long(ts.offset),
                  state.params.begin() + long(ts.offset + ts.size), t.data.begin());
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d_", idx++);
        store::write_tensor(dir / (std::string(buf) + ts.name + ".mst"), t);
    }
    Tensor m({uint32_t(state.opt.m.size())});
    m.data = state.opt.m;
    store::write_tensor(dir / "adam_m.mst", m);
    Tensor v({uint32_t(state.opt.v.size())});
    v.data = state.opt.v;
    store::write_tensor(dir / "adam_v.mst", v);
}

TrainState load_checkpoint(const fs::path& dir) {
    json header = json::parse(store::read_text_file(dir / "header.json"));
    if (header.value("format", "") != "monetlab-checkpoint-v1")
        throw data_error("load_checkpoint: unknown format field in " + dir.string());
    TrainState st;
    st.mcfg = mcfg_from_json(header.at("config"));
    model::UNet net(st.mcfg);
    const auto& layout = net.layout();
    const auto names = header.at("tensors");
    if (names.size() != layout.tensors.size())
        throw data_error("load_checkpoint: tensor list length mismatch");
    st.params.assign(layout.total, 0.f);
    int idx = 0;
    for (const auto& ts : layout.tensors) {
        if (names.at(size_t(idx)).get<std::string>() != ts.name)
            throw data_error("load_checkpoint: tensor order mismatch at " + ts.name);
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d_", idx++);
        Tensor t = store::read_tensor(dir / (std::string(buf) + ts.name + ".mst"));
        if (t.dims != ts.dims)
            throw data_error("load_checkpoint: shape mismatch for " + ts.name + ": file " +
                             t.shape_str());
        std::copy(t.data.begin(), t.data.end(), st.params.begin() + long(ts.offset));
    }
    Tensor m = store::read_tensor(dir / "adam_m.mst");
    Tensor v = store::read_tensor(dir / "adam_v.mst");
    if (m.data.size() != layout.total || v.data.size() != layout.total)
        throw data_error("load_checkpoint: optimizer moment size mismatch");
    st.opt.m = std::move(m.data);
    st.opt.v = std::move(v.data);
    st.opt.step = header.at("adam_step").get<int64_t>();
    st.step = header.at("step").get<int64_t>();
    if (!st.rng.restore_hex(header.at("rng").get<std::string>()))
        throw data_error("load_checkpoint: bad rng field");
    st.last_val_loss = header.at("metrics").at("val_loss").get<double>();
    st.dataset_root = header.at("dataset").at("root").get<std::string>();
    st.dataset_seed = header.at("dataset").at("seed").get<uint64_t>();
    return st;
}

// --- training loop -----------------------------------------------------------

std::string TrainingConfig::to_json() const {
    json j{{"tier", std::string(1, tier)},
           {"lr", lr},
           {"batch", batch},
           {"steps", steps},
           {"seed", seed},
           {"dataset_root", dataset_root},
           {"checkpoint_dir", checkpoint_dir},
           {"checkpoint_every", checkpoint_every},
           {"val_every", val_every},
           {"val_examples", val_examples},
           {"dump_every", dump_every},
           {"sample_steps", sample_steps},
           {"image_size", image_size}};
    return j.dump(2) + "\n";
}

TrainingConfig TrainingConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainingConfig c;
    const std::string tier = j.at("tier").get<std::string>();
    if (tier.size() != 1) throw data_error("training config: bad tier");
    c.tier = tier[0];
    c.lr = j.at("lr").get<double>();
    c.batch = j.at("batch").get<int>();
    c.steps = j.at("steps").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.dataset_root = j.at("dataset_root").get<std::string>();
    c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.val_every = j.value("val_every", c.val_every);
    c.val_examples = j.value("val_examples", c.val_examples);
    c.dump_every = j.value("dump_every", c.dump_every);
    c.sample_steps = j.value("sample_steps", c.sample_steps);
    c.image_size = j.value("image_size", c.image_size);
    return c;
}

LoadedDataset load_dataset(const fs::path& root, int max_train, int max_test,
                           const pipeline::PercentileStats* stats_override) {
    LoadedDataset d;
    d.manifest = synth::load_manifest(root);
    d.stats = stats_override ? *stats_override : pipeline::PercentileStats::load(root / "stats.json");
    auto load_split = [&](const std::vector<std::string>& ids, int cap,
                          std::vector<pipeline::NormalizedStack>& out, std::vector<int>& labels,
                          std::vector<std::string>& kept) {
        const size_t count = cap > 0 ? std::min(ids.size(), size_t(cap)) : ids.size();
        out.resize(count);
        labels.resize(count);
        kept.assign(ids.begin(), ids.begin() + long(count));
#pragma omp parallel for schedule(dynamic, 16)
        for (long long i = 0; i < (long long)count; ++i) {
            out[size_t(i)] = pipeline::preprocess(synth::load_stack(root, ids[size_t(i)]), d.stats);
        }
        for (size_t i = 0; i < count; ++i)
            labels[i] = synth::load_meta(root, ids[i]).perturbation_class;
    };
    load_split(d.manifest.train_ids, max_train, d.train, d.train_labels, d.train_ids);
    load_split(d.manifest.test_ids, max_test, d.test, d.test_labels, d.test_ids);
    return d;
}

TrainState train(const TrainingConfig& cfg, const LoadedDataset& data,
                 std::optional<TrainState> resume, DumpHook dump) {
    if (data.train.empty()) throw data_error("train: dataset has no training split");
    model::ModelConfig mcfg = model::ModelConfig::for_tier(cfg.tier);
    TrainState state = resume ? std::move(*resume) : init_state(mcfg, cfg.seed);
    if (resume && state.mcfg.tier != cfg.tier)
        throw usage_error("train: checkpoint tier does not match requested tier");
    model::UNet net(state.mcfg);
    state.dataset_root = cfg.dataset_root;
    state.dataset_seed = data.manifest.config.seed;

    const int native = data.train[0].height;
    const int out_size = cfg.image_size > 0 ? cfg.image_size : native;
    if (out_size % 4 != 0) throw usage_error("train: image size must be a multiple of 4");

    // fixed validation batch from the held-out split
    std::vector<pipeline::PairedExample> val_pairs;
    {
        Rng vrng = Rng::split(cfg.seed, 0x5a1d);
        const size_t nval = std::min(size_t(cfg.val_examples), data.test.size());
        for (size_t i = 0; i < nval; ++i)
            val_pairs.push_back(pipeline::make_training_pair(data.test[i], vrng, out_size));
    }
    FixedBatch val_fb = make_fixed_batch(val_pairs, cfg.seed);
    const double zero_loss = zero_model_loss(val_fb);

    const fs::path ckdir(cfg.checkpoint_dir);
    std::error_code ec;
    fs::create_directories(ckdir, ec);
    if (ec) throw data_error("train: cannot create checkpoint dir " + ckdir.string());
    store::write_text_file(ckdir / "train_config.json", cfg.to_json());

    FILE* metrics = std::fopen((ckdir / "metrics.jsonl").string().c_str(),
                               resume ? "ab" : "wb");
    if (!metrics) throw data_error("train: cannot open metrics log");
    const auto t_start = std::chrono::steady_clock::now();

    auto log_metrics = [&](int64_t step, double loss, double val_loss) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        json j{{"step", step}, {"loss", loss}, {"wall_time", wall}};
        if (val_loss >= 0) j["val_loss"] = val_loss;
        std::fprintf(metrics, "%s\n", j.dump().c_str());
        std::fflush(metrics);
    };

    if (!resume) {
        state.last_val_loss = eval_loss(net, state.params, val_fb);
        log_metrics(0, -1.0, state.last_val_loss);
        MLOG_INFO("train tier %c: zero-model val loss %.4f, init val loss %.4f", cfg.tier,
                  zero_loss, state.last_val_loss);
    }

    std::vector<pipeline::PairedExample> batch(size_t(cfg.batch));
    try {
        while (state.step < cfg.steps) {
            for (int b = 0; b < cfg.batch; ++b) {
                const size_t idx = size_t(state.rng.below(data.train.size()));
                batch[size_t(b)] =
                    pipeline::make_training_pair(data.train[idx], state.rng, out_size);
            }
            const float loss = training_step(net, state, batch, cfg.lr);
            double vl = -1.0;
            if (cfg.val_every > 0 && state.step % cfg.val_every == 0) {
                vl = eval_loss(net, state.params, val_fb);
                state.last_val_loss = vl;
                MLOG_INFO("step %lld loss %.4f val %.4f (zero %.4f)", (long long)state.step,
                          double(loss), vl, zero_loss);
            }
            log_metrics(state.step, double(loss), vl);
            if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
                state.step < cfg.steps) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "step_%06lld", (long long)state.step);
                save_checkpoint(ckdir / buf, net, state);
            }
            if (dump && cfg.dump_every > 0 && state.step % cfg.dump_every == 0)
                dump(state.step, net, state.params);
        }
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::numeric) {
            // keep a diagnostic snapshot of the aborted run
            save_checkpoint(ckdir / "abort_snapshot", net, state, e.what());
            std::fclose(metrics);
            throw;
        }
        std::fclose(metrics);
        throw;
    }

    state.last_val_loss = eval_loss(net, state.params, val_fb);
    log_metrics(state.step, state.loss_history.empty() ? -1.0 : state.loss_history.back(),
                state.last_val_loss);
    save_checkpoint(ckdir / "final", net, state);
    std::fclose(metrics);
    MLOG_INFO("train tier %c done: final val loss %.4f vs zero-model %.4f", cfg.tier,
              state.last_val_loss, zero_loss);
    return state;
}

}  // namespace monetlab::diffusion
