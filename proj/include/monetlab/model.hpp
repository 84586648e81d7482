#pragma once

#include <array>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "monetlab/common.hpp"
#include "monetlab/kernels.hpp"
#include "monetlab/rng.hpp"

namespace monetlab::model {

// Velocity-prediction UNet. Input layout (12 channels):
//   [0]     target brightfield
//   [1..5]  noised target paint
//   [6]     reference brightfield
//   [7..11] reference paint (all-zero when no reference is supplied)
// Output: 5-channel velocity field at input resolution.
//
// Schedule: stem conv -> res block (w) -> stride-2 conv (2w) -> res block
// -> stride-2 conv (4w) -> res block -> full self-attention -> res block
// -> upsample+conv (2w) + skip concat -> res block -> upsample+conv (w)
// + skip concat -> res block -> norm/act/3x3 head. A sinusoidal embedding
// of t runs through a 2-layer MLP and enters every res block as a
// per-channel bias.

constexpr int kInputChannels = 12;
constexpr int kOutputChannels = 5;

struct ModelConfig {
    int base_width = 16;
    std::array<int, 3> depth_mult{1, 2, 4};
    int attention_heads = 4;
    int time_embed_dim = 64;
    int group_count = 8;
    char tier = 'S';

    int width(int level) const { return base_width * depth_mult[size_t(level)]; }

    void validate() const {
        if (base_width <= 0 || base_width % group_count != 0)
            throw data_error("model config: base width must be a positive multiple of group count");
        if (width(2) % attention_heads != 0)
            throw data_error("model config: bottleneck width not divisible by attention heads");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw data_error("model config: time embed dim must be even and >= 2");
        if (depth_mult[0] != 1 || depth_mult[1] <= depth_mult[0] || depth_mult[2] <= depth_mult[1])
            throw data_error("model config: depth multipliers must be (1, m2, m3) increasing");
        if (tier != 'S' && tier != 'M' && tier != 'L')
            throw data_error("model config: tier must be one of S, M, L");
    }

    static ModelConfig for_tier(char tier) {
        ModelConfig c;
        c.tier = tier;
        switch (tier) {
            case 'S': c.base_width = 16; break;
            case 'M': c.base_width = 32; break;
            case 'L': c.base_width = 48; break;
            default: throw data_error(std::string("unknown tier '") + tier + "'");
        }
        return c;
    }
};

struct TensorSpec {
    std::string name;
    std::vector<uint32_t> dims;
    size_t offset = 0;
    size_t size = 0;
};

struct ParamLayout {
    std::vector<TensorSpec> tensors;
    std::unordered_map<std::string, size_t> index;
    size_t total = 0;

    void add(const std::string& name, std::vector<uint32_t> dims) {
        TensorSpec s;
        s.name = name;
        s.dims = std::move(dims);
        s.size = 1;
        for (uint32_t d : s.dims) s.size *= d;
        s.offset = total;
        total += s.size;
        index[name] = tensors.size();
        tensors.push_back(std::move(s));
    }

    const TensorSpec& spec(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw data_error("param layout: unknown tensor " + name);
        return tensors[it->second];
    }

    size_t off(const std::string& name) const { return spec(name).offset; }
};

inline void layout_resblock(ParamLayout& l, const std::string& p, int cin, int cout, int e) {
    l.add(p + ".gn1.g", {uint32_t(cin)});
    l.add(p + ".gn1.b", {uint32_t(cin)});
    l.add(p + ".conv1.w", {uint32_t(cout), uint32_t(cin), 3, 3});
    l.add(p + ".conv1.b", {uint32_t(cout)});
    l.add(p + ".temb.w", {uint32_t(cout), uint32_t(e)});
    l.add(p + ".temb.b", {uint32_t(cout)});
    l.add(p + ".gn2.g", {uint32_t(cout)});
    l.add(p + ".gn2.b", {uint32_t(cout)});
    l.add(p + ".conv2.w", {uint32_t(cout), uint32_t(cout), 3, 3});
    l.add(p + ".conv2.b", {uint32_t(cout)});
    if (cin != cout) {
        l.add(p + ".skip.w", {uint32_t(cout), uint32_t(cin)});
        l.add(p + ".skip.b", {uint32_t(cout)});
    }
}

inline ParamLayout build_layout(const ModelConfig& cfg) {
    cfg.validate();
    const int w = cfg.width(0), w2 = cfg.width(1), w4 = cfg.width(2), e = cfg.time_embed_dim;
    ParamLayout l;
    l.add("tmlp.fc1.w", {uint32_t(e), uint32_t(e)});
    l.add("tmlp.fc1.b", {uint32_t(e)});
    l.add("tmlp.fc2.w", {uint32_t(e), uint32_t(e)});
    l.add("tmlp.fc2.b", {uint32_t(e)});
    l.add("stem.w", {uint32_t(w), kInputChannels, 3, 3});
    l.add("stem.b", {uint32_t(w)});
    layout_resblock(l, "enc1", w, w, e);
    l.add("down1.w", {uint32_t(w2), uint32_t(w), 3, 3});
    l.add("down1.b", {uint32_t(w2)});
    layout_resblock(l, "enc2", w2, w2, e);
    l.add("down2.w", {uint32_t(w4), uint32_t(w2), 3, 3});
    l.add("down2.b", {uint32_t(w4)});
    layout_resblock(l, "mid1", w4, w4, e);
    l.add("attn.gn.g", {uint32_t(w4)});
    l.add("attn.gn.b", {uint32_t(w4)});
    l.add("attn.q.w", {uint32_t(w4), uint32_t(w4)});
    l.add("attn.q.b", {uint32_t(w4)});
    l.add("attn.k.w", {uint32_t(w4), uint32_t(w4)});
    l.add("attn.k.b", {uint32_t(w4)});
    l.add("attn.v.w", {uint32_t(w4), uint32_t(w4)});
    l.add("attn.v.b", {uint32_t(w4)});
    l.add("attn.o.w", {uint32_t(w4), uint32_t(w4)});
    l.add("attn.o.b", {uint32_t(w4)});
    layout_resblock(l, "mid2", w4, w4, e);
    l.add("up1.w", {uint32_t(w2), uint32_t(w4), 3, 3});
    l.add("up1.b", {uint32_t(w2)});
    layout_resblock(l, "dec1", 2 * w2, w2, e);
    l.add("up2.w", {uint32_t(w), uint32_t(w2), 3, 3});
    l.add("up2.b", {uint32_t(w)});
    layout_resblock(l, "dec2", 2 * w, w, e);
    l.add("head.gn.g", {uint32_t(w)});
    l.add("head.gn.b", {uint32_t(w)});
    l.add("head.w", {kOutputChannels, uint32_t(w), 3, 3});
    l.add("head.b", {kOutputChannels});
    return l;
}

inline size_t count_params(const ModelConfig& cfg) { return build_layout(cfg).total; }

// Weights uniform in +/-sqrt(1/fan_in); biases 0; normalization gains 1;
// the output head zero so a fresh model is the exact zero-velocity field.
inline std::vector<float> init_params(const ModelConfig& cfg, uint64_t seed) {
    ParamLayout layout = build_layout(cfg);
    std::vector<float> p(layout.total, 0.f);
    Rng rng = Rng::split(seed, /*stream=*/0x1117);
    for (const TensorSpec& ts : layout.tensors) {
        float* dst = p.data() + ts.offset;
        const bool is_weight = ts.name.ends_with(".w");
        const bool is_gain = ts.name.ends_with(".g");
        if (ts.name == "head.w" || ts.name == "head.b") {
            continue;  // stays zero
        } else if (is_weight) {
            size_t fan_in = 1;
            for (size_t i = 1; i < ts.dims.size(); ++i) fan_in *= ts.dims[i];
            float bound = std::sqrt(1.f / float(fan_in));
            for (size_t i = 0; i < ts.size; ++i)
                dst[i] = float(rng.uniform(-double(bound), double(bound)));
        } else if (is_gain) {
            for (size_t i = 0; i < ts.size; ++i) dst[i] = 1.f;
        }
        // biases and normalization offsets stay zero
    }
    return p;
}

template <typename T>
void time_embedding(T t, int dim, T* out) {
    const int half = dim / 2;
    const T tau = T(1000) * t;
    for (int i = 0; i < half; ++i) {
        T f = half > 1 ? std::exp(-std::log(T(10000)) * T(i) / T(half - 1)) : T(1);
        out[i] = std::sin(tau * f);
        out[half + i] = std::cos(tau * f);
    }
}

namespace detail {

struct BlockOff {
    size_t gn1_g, gn1_b, conv1_w, conv1_b, temb_w, temb_b, gn2_g, gn2_b, conv2_w, conv2_b;
    size_t skip_w = 0, skip_b = 0;
    bool has_skip = false;
    int cin = 0, cout = 0;
};

inline BlockOff resolve_block(const ParamLayout& l, const std::string& p, int cin, int cout) {
    BlockOff b;
    b.cin = cin;
    b.cout = cout;
    b.gn1_g = l.off(p + ".gn1.g");
    b.gn1_b = l.off(p + ".gn1.b");
    b.conv1_w = l.off(p + ".conv1.w");
    b.conv1_b = l.off(p + ".conv1.b");
    b.temb_w = l.off(p + ".temb.w");
    b.temb_b = l.off(p + ".temb.b");
    b.gn2_g = l.off(p + ".gn2.g");
    b.gn2_b = l.off(p + ".gn2.b");
    b.conv2_w = l.off(p + ".conv2.w");
    b.conv2_b = l.off(p + ".conv2.b");
    if (cin != cout) {
        b.has_skip = true;
        b.skip_w = l.off(p + ".skip.w");
        b.skip_b = l.off(p + ".skip.b");
    }
    return b;
}

template <typename T>
struct BlockBufs {
    std::vector<T> h1, a1, c1b, h2, a2, out;
    std::vector<T> gn1_m, gn1_s, gn2_m, gn2_s;
    void resize(int cin, int cout, int n, int groups) {
        h1.resize(size_t(cin) * n);
        a1.resize(size_t(cin) * n);
        c1b.resize(size_t(cout) * n);
        h2.resize(size_t(cout) * n);
        a2.resize(size_t(cout) * n);
        out.resize(size_t(cout) * n);
        gn1_m.resize(groups);
        gn1_s.resize(groups);
        gn2_m.resize(groups);
        gn2_s.resize(groups);
    }
};

}  // namespace detail

template <typename T>
struct Workspace {
    int h = 0, w = 0;
    std::vector<T> input;  // copy of the 12-channel input, kept for backward
    T t_val = T(0);

    std::vector<T> temb_raw, tm1, ta1, tm2, tact;
    std::vector<T> x0;
    detail::BlockBufs<T> enc1, enc2, mid1, mid2, dec1, dec2;
    std::vector<T> d1, d2;
    std::vector<T> att_a, att_q, att_k, att_v, att_p, att_o, att_out;
    std::vector<T> att_gn_m, att_gn_s;
    std::vector<T> u1, cat1, u2, cat2;
    std::vector<T> head_hg, head_ha;
    std::vector<T> head_gn_m, head_gn_s;

    // backward scratch
    std::vector<T> g_full_a, g_full_b, g_half_a, g_half_b, g_quart_a, g_quart_b;
    std::vector<T> g_cat1, g_cat2, g_tact, g_temb_scratch;
    std::vector<T> att_gs, att_gp, att_gq, att_gk, att_gv, att_go, att_ga, att_tmp, att_s;
};

class UNet {
public:
    explicit UNet(const ModelConfig& cfg) : cfg_(cfg), layout_(build_layout(cfg)) {
        const int w = cfg.width(0), w2 = cfg.width(1), w4 = cfg.width(2);
        stem_w_ = layout_.off("stem.w");
        stem_b_ = layout_.off("stem.b");
        down1_w_ = layout_.off("down1.w");
        down1_b_ = layout_.off("down1.b");
        down2_w_ = layout_.off("down2.w");
        down2_b_ = layout_.off("down2.b");
        up1_w_ = layout_.off("up1.w");
        up1_b_ = layout_.off("up1.b");
        up2_w_ = layout_.off("up2.w");
        up2_b_ = layout_.off("up2.b");
        head_gn_g_ = layout_.off("head.gn.g");
        head_gn_b_ = layout_.off("head.gn.b");
        head_w_ = layout_.off("head.w");
        head_b_ = layout_.off("head.b");
        tmlp_fc1_w_ = layout_.off("tmlp.fc1.w");
        tmlp_fc1_b_ = layout_.off("tmlp.fc1.b");
        tmlp_fc2_w_ = layout_.off("tmlp.fc2.w");
        tmlp_fc2_b_ = layout_.off("tmlp.fc2.b");
        attn_gn_g_ = layout_.off("attn.gn.g");
        attn_gn_b_ = layout_.off("attn.gn.b");
        attn_q_w_ = layout_.off("attn.q.w");
        attn_q_b_ = layout_.off("attn.q.b");
        attn_k_w_ = layout_.off("attn.k.w");
        attn_k_b_ = layout_.off("attn.k.b");
        attn_v_w_ = layout_.off("attn.v.w");
        attn_v_b_ = layout_.off("attn.v.b");
        attn_o_w_ = layout_.off("attn.o.w");
        attn_o_b_ = layout_.off("attn.o.b");
        enc1_ = detail::resolve_block(layout_, "enc1", w, w);
        enc2_ = detail::resolve_block(layout_, "enc2", w2, w2);
        mid1_ = detail::resolve_block(layout_, "mid1", w4, w4);
        mid2_ = detail::resolve_block(layout_, "mid2", w4, w4);
        dec1_ = detail::resolve_block(layout_, "dec1", 2 * w2, w2);
        dec2_ = detail::resolve_block(layout_, "dec2", 2 * w, w);
    }

    const ModelConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return layout_; }
    size_t param_count() const { return layout_.total; }

    template <typename T>
    void alloc_workspace(Workspace<T>& ws, int h, int w) const {
        if (h % 4 != 0 || w % 4 != 0 || h <= 0 || w <= 0)
            throw data_error("model forward: spatial dims must be positive multiples of 4, got " +
                             std::to_string(h) + "x" + std::to_string(w));
        const int c1 = cfg_.width(0), c2 = cfg_.width(1), c4 = cfg_.width(2);
        const int e = cfg_.time_embed_dim, g = cfg_.group_count, heads = cfg_.attention_heads;
        const int n = h * w, nh = n / 4, nq = n / 16;
        ws.h = h;
        ws.w = w;
        ws.input.resize(size_t(kInputChannels) * n);
        ws.temb_raw.resize(e);
        ws.tm1.resize(e);
        ws.ta1.resize(e);
        ws.tm2.resize(e);
        ws.tact.resize(e);
        ws.x0.resize(size_t(c1) * n);
        ws.enc1.resize(c1, c1, n, g);
        ws.d1.resize(size_t(c2) * nh);
        ws.enc2.resize(c2, c2, nh, g);
        ws.d2.resize(size_t(c4) * nq);
        ws.mid1.resize(c4, c4, nq, g);
        ws.mid2.resize(c4, c4, nq, g);
        ws.att_a.resize(size_t(c4) * nq);
        ws.att_q.resize(size_t(c4) * nq);
        ws.att_k.resize(size_t(c4) * nq);
        ws.att_v.resize(size_t(c4) * nq);
        ws.att_p.resize(size_t(heads) * nq * nq);
        ws.att_o.resize(size_t(c4) * nq);
        ws.att_out.resize(size_t(c4) * nq);
        ws.att_gn_m.resize(g);
        ws.att_gn_s.resize(g);
        ws.u1.resize(size_t(c4) * nh);
        ws.cat1.resize(size_t(2 * c2) * nh);
        ws.dec1.resize(2 * c2, c2, nh, g);
        ws.u2.resize(size_t(c2) * n);
        ws.cat2.resize(size_t(2 * c1) * n);
        ws.dec2.resize(2 * c1, c1, n, g);
        ws.head_hg.resize(size_t(c1) * n);
        ws.head_ha.resize(size_t(c1) * n);
        ws.head_gn_m.resize(g);
        ws.head_gn_s.resize(g);

        ws.g_full_a.resize(size_t(2 * c1) * n);
        ws.g_full_b.resize(size_t(2 * c1) * n);
        ws.g_half_a.resize(size_t(c4) * nh);
        ws.g_half_b.resize(size_t(c4) * nh);
        ws.g_quart_a.resize(size_t(c4) * nq);
        ws.g_quart_b.resize(size_t(c4) * nq);
        ws.g_cat1.resize(size_t(2 * c2) * nh);
        ws.g_cat2.resize(size_t(2 * c1) * n);
        ws.g_tact.resize(e);
        ws.g_temb_scratch.resize(e);
        ws.att_gs.resize(size_t(nq) * nq);
        ws.att_gp.resize(size_t(nq) * nq);
        ws.att_s.resize(size_t(nq) * nq);
        ws.att_gq.resize(size_t(c4) * nq);
        ws.att_gk.resize(size_t(c4) * nq);
        ws.att_gv.resize(size_t(c4) * nq);
        ws.att_go.resize(size_t(c4) * nq);
        ws.att_ga.resize(size_t(c4) * nq);
        ws.att_tmp.resize(size_t(c4) * nq);
    }

    // input: 12 x h x w, out: 5 x h x w. Pure given (params, input, t).
    template <typename T>
    void forward(const T* params, const T* input, T t, Workspace<T>& ws, T* out) const {
        namespace K = monetlab::kernels;
        const int h = ws.h, w = ws.w;
        const int n = h * w, nh = n / 4, nq = n / 16;
        const int c1 = cfg_.width(0), c2 = cfg_.width(1), c4 = cfg_.width(2);
        const int e = cfg_.time_embed_dim, g = cfg_.group_count;
        std::memcpy(ws.input.data(), input, sizeof(T) * size_t(kInputChannels) * n);
        ws.t_val = t;

        time_embedding(t, e, ws.temb_raw.data());
        K::linear_fwd(ws.temb_raw.data(), e, params + tmlp_fc1_w_, params + tmlp_fc1_b_,
                      ws.tm1.data(), e);
        K::ref::silu_fwd(ws.tm1.data(), ws.ta1.data(), size_t(e));
        K::linear_fwd(ws.ta1.data(), e, params + tmlp_fc2_w_, params + tmlp_fc2_b_, ws.tm2.data(),
                      e);
        K::ref::silu_fwd(ws.tm2.data(), ws.tact.data(), size_t(e));

        K::conv3x3_fwd(ws.input.data(), kInputChannels, h, w, params + stem_w_, params + stem_b_,
                       ws.x0.data(), c1, 1);
        resblock_fwd(params, enc1_, ws.x0.data(), h, w, g, ws.tact.data(), ws.enc1);
        K::conv3x3_fwd(ws.enc1.out.data(), c1, h, w, params + down1_w_, params + down1_b_,
                       ws.d1.data(), c2, 2);
        resblock_fwd(params, enc2_, ws.d1.data(), h / 2, w / 2, g, ws.tact.data(), ws.enc2);
        K::conv3x3_fwd(ws.enc2.out.data(), c2, h / 2, w / 2, params + down2_w_, params + down2_b_,
                       ws.d2.data(), c4, 2);
        resblock_fwd(params, mid1_, ws.d2.data(), h / 4, w / 4, g, ws.tact.data(), ws.mid1);
        attn_fwd(params, ws, nq);
        resblock_fwd(params, mid2_, ws.att_out.data(), h / 4, w / 4, g, ws.tact.data(), ws.mid2);

        K::upsample2x_fwd(ws.mid2.out.data(), c4, h / 4, w / 4, ws.u1.data());
        K::conv3x3_fwd(ws.u1.data(), c4, h / 2, w / 2, params + up1_w_, params + up1_b_,
                       ws.cat1.data(), c2, 1);
        std::memcpy(ws.cat1.data() + size_t(c2) * nh, ws.enc2.out.data(),
                    sizeof(T) * size_t(c2) * nh);
        resblock_fwd(params, dec1_, ws.cat1.data(), h / 2, w / 2, g, ws.tact.data(), ws.dec1);

        K::upsample2x_fwd(ws.dec1.out.data(), c2, h / 2, w / 2, ws.u2.data());
        K::conv3x3_fwd(ws.u2.data(), c2, h, w, params + up2_w_, params + up2_b_, ws.cat2.data(),
                       c1, 1);
        std::memcpy(ws.cat2.data() + size_t(c1) * n, ws.enc1.out.data(),
                    sizeof(T) * size_t(c1) * n);
        resblock_fwd(params, dec2_, ws.cat2.data(), h, w, g, ws.tact.data(), ws.dec2);

        K::groupnorm_fwd(ws.dec2.out.data(), c1, n, g, T(1e-5), params + head_gn_g_,
                         params + head_gn_b_, ws.head_hg.data(), ws.head_gn_m.data(),
                         ws.head_gn_s.data());
        K::silu_fwd(ws.head_hg.data(), ws.head_ha.data(), size_t(c1) * n);
        K::conv3x3_fwd(ws.head_ha.data(), c1, h, w, params + head_w_, params + head_b_, out,
                       kOutputChannels, 1);
    }

    // Accumulates parameter gradients into `grads` (caller zeroes); writes the
    // input gradient into `ginput` when non-null. Requires the workspace of the
    // matching forward call.
    template <typename T>
    void backward(const T* params, Workspace<T>& ws, const T* gout, T* grads,
                  T* ginput = nullptr) const {
        namespace K = monetlab::kernels;
        const int h = ws.h, w = ws.w;
        const int n = h * w, nh = n / 4, nq = n / 16;
        const int c1 = cfg_.width(0), c2 = cfg_.width(1), c4 = cfg_.width(2);
        const int e = cfg_.time_embed_dim, g = cfg_.group_count;
        std::fill(ws.g_tact.begin(), ws.g_tact.end(), T(0));

        // head
        T* g_ha = ws.g_full_a.data();  // c1 x n
        K::conv3x3_bwd_wb(gout, kOutputChannels, ws.head_ha.data(), c1, h, w, grads + head_w_,
                          grads + head_b_, 1);
        K::conv3x3_bwd_data(gout, kOutputChannels, h, w, params + head_w_, g_ha, c1, 1);
        T* g_hg = ws.g_full_b.data();
        K::silu_bwd(g_ha, ws.head_hg.data(), g_hg, size_t(c1) * n);
        T* g_dd2 = ws.g_full_a.data();
        K::groupnorm_bwd(g_hg, ws.dec2.out.data(), c1, n, g, params + head_gn_g_,
                         ws.head_gn_m.data(), ws.head_gn_s.data(), g_dd2, grads + head_gn_g_,
                         grads + head_gn_b_);

        // dec2 + skip split
        resblock_bwd(params, dec2_, ws.cat2.data(), h, w, g, ws.dec2, g_dd2, ws.g_cat2.data(),
                     grads, ws);
        T* g_c2 = ws.g_cat2.data();
        T* g_s1 = ws.g_cat2.data() + size_t(c1) * n;

        // up2 path
        T* g_u2 = ws.g_full_a.data();  // c2 x n
        K::conv3x3_bwd_wb(g_c2, c1, ws.u2.data(), c2, h, w, grads + up2_w_, grads + up2_b_, 1);
        K::conv3x3_bwd_data(g_c2, c1, h, w, params + up2_w_, g_u2, c2, 1);
        T* g_dd1 = ws.g_half_a.data();  // c2 x nh
        K::upsample2x_bwd(g_u2, c2, h / 2, w / 2, g_dd1);

        // dec1 + skip split
        resblock_bwd(params, dec1_, ws.cat1.data(), h / 2, w / 2, g, ws.dec1, g_dd1,
                     ws.g_cat1.data(), grads, ws);
        T* g_c1 = ws.g_cat1.data();
        T* g_s2 = ws.g_cat1.data() + size_t(c2) * nh;

        // up1 path
        T* g_u1 = ws.g_half_a.data();  // c4 x nh
        K::conv3x3_bwd_wb(g_c1, c2, ws.u1.data(), c4, h / 2, w / 2, grads + up1_w_, grads + up1_b_,
                          1);
        K::conv3x3_bwd_data(g_c1, c2, h / 2, w / 2, params + up1_w_, g_u1, c4, 1);
        T* g_m2b = ws.g_quart_a.data();  // c4 x nq
        K::upsample2x_bwd(g_u1, c4, h / 4, w / 4, g_m2b);

        // mid2, attention, mid1
        T* g_att_out = ws.g_quart_b.data();
        resblock_bwd(params, mid2_, ws.att_out.data(), h / 4, w / 4, g, ws.mid2, g_m2b, g_att_out,
                     grads, ws);
        T* g_m1b = ws.g_quart_a.data();
        attn_bwd(params, ws, nq, g_att_out, g_m1b, grads);
        T* g_d2 = ws.g_quart_b.data();
        resblock_bwd(params, mid1_, ws.d2.data(), h / 4, w / 4, g, ws.mid1, g_m1b, g_d2, grads,
                     ws);

        // down2
        T* g_b2 = ws.g_half_a.data();  // c2 x nh
        K::conv3x3_bwd_wb(g_d2, c4, ws.enc2.out.data(), c2, h / 2, w / 2, grads + down2_w_,
                          grads + down2_b_, 2);
        K::conv3x3_bwd_data(g_d2, c4, h / 2, w / 2, params + down2_w_, g_b2, c2, 2);
        for (size_t i = 0; i < size_t(c2) * nh; ++i) g_b2[i] += g_s2[i];

        // enc2
        T* g_d1 = ws.g_half_b.data();
        resblock_bwd(params, enc2_, ws.d1.data(), h / 2, w / 2, g, ws.enc2, g_b2, g_d1, grads, ws);

        // down1
        T* g_b1 = ws.g_full_a.data();  // c1 x n
        K::conv3x3_bwd_wb(g_d1, c2, ws.enc1.out.data(), c1, h, w, grads + down1_w_,
                          grads + down1_b_, 2);
        K::conv3x3_bwd_data(g_d1, c2, h, w, params + down1_w_, g_b1, c1, 2);
        for (size_t i = 0; i < size_t(c1) * n; ++i) g_b1[i] += g_s1[i];

        // enc1
        T* g_x0 = ws.g_full_b.data();
        resblock_bwd(params, enc1_, ws.x0.data(), h, w, g, ws.enc1, g_b1, g_x0, grads, ws);

        // stem
        K::conv3x3_bwd_wb(g_x0, c1, ws.input.data(), kInputChannels, h, w, grads + stem_w_,
                          grads + stem_b_, 1);
        if (ginput)
            K::conv3x3_bwd_data(g_x0, c1, h, w, params + stem_w_, ginput, kInputChannels, 1);

        // time MLP chain: g_tact was accumulated across all blocks
        T* g_tm2 = ws.g_temb_scratch.data();
        K::ref::silu_bwd(ws.g_tact.data(), ws.tm2.data(), g_tm2, size_t(e));
        std::vector<T> g_ta1(e), g_tm1(e);
        K::linear_bwd(g_tm2, ws.ta1.data(), e, params + tmlp_fc2_w_, e, g_ta1.data(),
                      grads + tmlp_fc2_w_, grads + tmlp_fc2_b_);
        K::ref::silu_bwd(g_ta1.data(), ws.tm1.data(), g_tm1.data(), size_t(e));
        K::linear_bwd(g_tm1.data(), ws.temb_raw.data(), e, params + tmlp_fc1_w_, e,
                      static_cast<T*>(nullptr), grads + tmlp_fc1_w_, grads + tmlp_fc1_b_);
    }

    // The attention sublayer is exposed for its permutation-equivariance
    // property test: it reads ws.mid1.out and writes ws.att_out. Position
    // information enters the model only through the convolutions.
    template <typename T>
    void attention_sublayer(const T* params, Workspace<T>& ws, int n) const {
        attn_fwd(params, ws, n);
    }

private:
    template <typename T>
    void resblock_fwd(const T* params, const detail::BlockOff& b, const T* x, int hh, int ww,
                      int groups, const T* tact, detail::BlockBufs<T>& bb) const {
        namespace K = monetlab::kernels;
        const int e = cfg_.time_embed_dim;
        const int n = hh * ww;
        K::groupnorm_fwd(x, b.cin, n, groups, T(1e-5), params + b.gn1_g, params + b.gn1_b,
                         bb.h1.data(), bb.gn1_m.data(), bb.gn1_s.data());
        K::silu_fwd(bb.h1.data(), bb.a1.data(), size_t(b.cin) * n);
        K::conv3x3_fwd(bb.a1.data(), b.cin, hh, ww, params + b.conv1_w, params + b.conv1_b,
                       bb.c1b.data(), b.cout, 1);
        // per-channel time bias
        std::vector<T> tb(b.cout);
        K::linear_fwd(tact, e, params + b.temb_w, params + b.temb_b, tb.data(), b.cout);
        for (int c = 0; c < b.cout; ++c) {
            T* row = bb.c1b.data() + size_t(c) * n;
            const T bias = tb[size_t(c)];
            for (int p = 0; p < n; ++p) row[p] += bias;
        }
        K::groupnorm_fwd(bb.c1b.data(), b.cout, n, groups, T(1e-5), params + b.gn2_g,
                         params + b.gn2_b, bb.h2.data(), bb.gn2_m.data(), bb.gn2_s.data());
        K::silu_fwd(bb.h2.data(), bb.a2.data(), size_t(b.cout) * n);
        K::conv3x3_fwd(bb.a2.data(), b.cout, hh, ww, params + b.conv2_w, params + b.conv2_b,
                       bb.out.data(), b.cout, 1);
        if (b.has_skip) {
            std::vector<T> sk(size_t(b.cout) * n);
            K::conv1x1_fwd(x, b.cin, n, params + b.skip_w, params + b.skip_b, sk.data(), b.cout);
            for (size_t i = 0; i < sk.size(); ++i) bb.out[i] += sk[i];
        } else {
            for (size_t i = 0; i < size_t(b.cout) * n; ++i) bb.out[i] += x[i];
        }
    }

    template <typename T>
    void resblock_bwd(const T* params, const detail::BlockOff& b, const T* x, int hh, int ww,
                      int groups, detail::BlockBufs<T>& bb, const T* gout, T* gx, T* grads,
                      Workspace<T>& ws) const {
        namespace K = monetlab::kernels;
        const int e = cfg_.time_embed_dim;
        const int n = hh * ww;
        std::vector<T> g_a2(size_t(b.cout) * n), g_h2(size_t(b.cout) * n),
            g_c1b(size_t(b.cout) * n), g_a1(size_t(b.cin) * n), g_h1(size_t(b.cin) * n);
        K::conv3x3_bwd_wb(gout, b.cout, bb.a2.data(), b.cout, hh, ww, grads + b.conv2_w,
                          grads + b.conv2_b, 1);
        K::conv3x3_bwd_data(gout, b.cout, hh, ww, params + b.conv2_w, g_a2.data(), b.cout, 1);
        K::silu_bwd(g_a2.data(), bb.h2.data(), g_h2.data(), size_t(b.cout) * n);
        K::groupnorm_bwd(g_h2.data(), bb.c1b.data(), b.cout, n, groups, params + b.gn2_g,
                         bb.gn2_m.data(), bb.gn2_s.data(), g_c1b.data(), grads + b.gn2_g,
                         grads + b.gn2_b);
        // time bias: channel sums feed the embedding projection
        std::vector<T> g_tb(b.cout);
        for (int c = 0; c < b.cout; ++c) {
            const T* row = g_c1b.data() + size_t(c) * n;
            T acc = T(0);
            for (int p = 0; p < n; ++p) acc += row[p];
            g_tb[size_t(c)] = acc;
        }
        std::vector<T> g_tact_local(e);
        K::linear_bwd(g_tb.data(), ws.tact.data(), e, params + b.temb_w, b.cout,
                      g_tact_local.data(), grads + b.temb_w, grads + b.temb_b);
        for (int i = 0; i < e; ++i) ws.g_tact[size_t(i)] += g_tact_local[size_t(i)];

        K::conv3x3_bwd_wb(g_c1b.data(), b.cout, bb.a1.data(), b.cin, hh, ww, grads + b.conv1_w,
                          grads + b.conv1_b, 1);
        K::conv3x3_bwd_data(g_c1b.data(), b.cout, hh, ww, params + b.conv1_w, g_a1.data(), b.cin,
                            1);
        K::silu_bwd(g_a1.data(), bb.h1.data(), g_h1.data(), size_t(b.cin) * n);
        K::groupnorm_bwd(g_h1.data(), x, b.cin, n, groups, params + b.gn1_g, bb.gn1_m.data(),
                         bb.gn1_s.data(), gx, grads + b.gn1_g, grads + b.gn1_b);
        if (b.has_skip) {
            K::conv1x1_bwd_wb(gout, b.cout, x, b.cin, n, grads + b.skip_w, grads + b.skip_b);
            std::vector<T> g_skip(size_t(b.cin) * n);
            K::conv1x1_bwd_data(gout, b.cout, n, params + b.skip_w, g_skip.data(), b.cin);
            for (size_t i = 0; i < g_skip.size(); ++i) gx[i] += g_skip[i];
        } else {
            for (size_t i = 0; i < size_t(b.cin) * n; ++i) gx[i] += gout[i];
        }
    }

    template <typename T>
    void attn_fwd(const T* params, Workspace<T>& ws, int n) const {
        namespace K = monetlab::kernels;
        const int c4 = cfg_.width(2), heads = cfg_.attention_heads, g = cfg_.group_count;
        const int d = c4 / heads;
        const T* x = ws.mid1.out.data();
        K::groupnorm_fwd(x, c4, n, g, T(1e-5), params + attn_gn_g_, params + attn_gn_b_,
                         ws.att_a.data(), ws.att_gn_m.data(), ws.att_gn_s.data());
        K::conv1x1_fwd(ws.att_a.data(), c4, n, params + attn_q_w_, params + attn_q_b_,
                       ws.att_q.data(), c4);
        K::conv1x1_fwd(ws.att_a.data(), c4, n, params + attn_k_w_, params + attn_k_b_,
                       ws.att_k.data(), c4);
        K::conv1x1_fwd(ws.att_a.data(), c4, n, params + attn_v_w_, params + attn_v_b_,
                       ws.att_v.data(), c4);
        const T scale = T(1) / std::sqrt(T(d));
        T* s = ws.att_s.data();
        for (int hd = 0; hd < heads; ++hd) {
            const T* q = ws.att_q.data() + size_t(hd) * d * n;
            const T* k = ws.att_k.data() + size_t(hd) * d * n;
            const T* v = ws.att_v.data() + size_t(hd) * d * n;
            T* p = ws.att_p.data() + size_t(hd) * n * n;
            K::gemm_tn(q, k, s, n, n, d);
            for (size_t i = 0; i < size_t(n) * n; ++i) s[i] *= scale;
            K::softmax_rows(s, p, n, n);
            K::gemm_nt(v, p, ws.att_o.data() + size_t(hd) * d * n, d, n, n);
        }
        K::conv1x1_fwd(ws.att_o.data(), c4, n, params + attn_o_w_, params + attn_o_b_,
                       ws.att_out.data(), c4);
        for (size_t i = 0; i < size_t(c4) * n; ++i) ws.att_out[i] += x[i];
    }

    template <typename T>
    void attn_bwd(const T* params, Workspace<T>& ws, int n, const T* gout, T* gx, T* grads) const {
        namespace K = monetlab::kernels;
        const int c4 = cfg_.width(2), heads = cfg_.attention_heads, g = cfg_.group_count;
        const int d = c4 / heads;
        const T* x = ws.mid1.out.data();
        const T scale = T(1) / std::sqrt(T(d));
        // residual: gx starts as gout
        std::memcpy(gx, gout, sizeof(T) * size_t(c4) * n);
        K::conv1x1_bwd_wb(gout, c4, ws.att_o.data(), c4, n, grads + attn_o_w_, grads + attn_o_b_);
        K::conv1x1_bwd_data(gout, c4, n, params + attn_o_w_, ws.att_go.data(), c4);
        for (int hd = 0; hd < heads; ++hd) {
            const T* q = ws.att_q.data() + size_t(hd) * d * n;
            const T* k = ws.att_k.data() + size_t(hd) * d * n;
            const T* v = ws.att_v.data() + size_t(hd) * d * n;
            const T* p = ws.att_p.data() + size_t(hd) * n * n;
            const T* go = ws.att_go.data() + size_t(hd) * d * n;
            K::gemm_tn(go, v, ws.att_gp.data(), n, n, d);
            K::gemm_nn(go, p, ws.att_gv.data() + size_t(hd) * d * n, d, n, n);
            K::softmax_rows_bwd(ws.att_gp.data(), p, ws.att_gs.data(), n, n);
            for (size_t i = 0; i < size_t(n) * n; ++i) ws.att_gs[i] *= scale;
            K::gemm_nt(k, ws.att_gs.data(), ws.att_gq.data() + size_t(hd) * d * n, d, n, n);
            K::gemm_nn(q, ws.att_gs.data(), ws.att_gk.data() + size_t(hd) * d * n, d, n, n);
        }
        // accumulate into g_a from the three projections
        T* ga = ws.att_ga.data();
        K::conv1x1_bwd_wb(ws.att_gq.data(), c4, ws.att_a.data(), c4, n, grads + attn_q_w_,
                          grads + attn_q_b_);
        K::conv1x1_bwd_data(ws.att_gq.data(), c4, n, params + attn_q_w_, ga, c4);
        K::conv1x1_bwd_wb(ws.att_gk.data(), c4, ws.att_a.data(), c4, n, grads + attn_k_w_,
                          grads + attn_k_b_);
        K::conv1x1_bwd_data(ws.att_gk.data(), c4, n, params + attn_k_w_, ws.att_tmp.data(), c4);
        for (size_t i = 0; i < size_t(c4) * n; ++i) ga[i] += ws.att_tmp[i];
        K::conv1x1_bwd_wb(ws.att_gv.data(), c4, ws.att_a.data(), c4, n, grads + attn_v_w_,
                          grads + attn_v_b_);
        K::conv1x1_bwd_data(ws.att_gv.data(), c4, n, params + attn_v_w_, ws.att_tmp.data(), c4);
        for (size_t i = 0; i < size_t(c4) * n; ++i) ga[i] += ws.att_tmp[i];
        // through the pre-norm into the residual stream
        K::groupnorm_bwd(ga, x, c4, n, g, params + attn_gn_g_, ws.att_gn_m.data(),
                         ws.att_gn_s.data(), ws.att_tmp.data(), grads + attn_gn_g_,
                         grads + attn_gn_b_);
        for (size_t i = 0; i < size_t(c4) * n; ++i) gx[i] += ws.att_tmp[i];
    }

    ModelConfig cfg_;
    ParamLayout layout_;
    size_t stem_w_, stem_b_, down1_w_, down1_b_, down2_w_, down2_b_;
    size_t up1_w_, up1_b_, up2_w_, up2_b_;
    size_t head_gn_g_, head_gn_b_, head_w_, head_b_;
    size_t tmlp_fc1_w_, tmlp_fc1_b_, tmlp_fc2_w_, tmlp_fc2_b_;
    size_t attn_gn_g_, attn_gn_b_, attn_q_w_, attn_q_b_, attn_k_w_, attn_k_b_, attn_v_w_,
        attn_v_b_, attn_o_w_, attn_o_b_;
    detail::BlockOff enc1_, enc2_, mid1_, mid2_, dec1_, dec2_;
};

}  // namespace monetlab::model
