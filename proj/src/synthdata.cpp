#include "monetlab/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "monetlab/common.hpp"
#include "monetlab/store.hpp"

namespace monetlab::synth {

namespace fs = std::filesystem;
using nlohmann::json;

Domain parse_domain(const std::string& s) {
    if (s == "base") return Domain::base;
    if (s == "shifted") return Domain::shifted;
    throw data_error("unknown domain '" + s + "'");
}

// Per-class morphology modifiers. Class 1 is the strong-geometry analog
// (easy from any channel), class 3 only nudges chromatin texture (hard even
// from paint), the rest sit in between.
struct ClassEffects {
    float nucleus_aspect = 1.f;
    float cell_scale = 1.f;
    float mito_count = 1.f;
    float mito_bright = 1.f;
    float dna_tex_freq = 1.f;
    float dna_tex_contrast = 1.f;
    float er_width = 1.f;
    float er_bright = 1.f;
    int extra_cells = 0;
};

static ClassEffects class_effects(int cls) {
    ClassEffects e;
    switch (cls) {
        case 0: break;  // control
        case 1:         // spindle-like: elongated nuclei, enlarged cells
            e.nucleus_aspect = 2.3f;
            e.cell_scale = 1.28f;
            break;
        case 2:  // mitochondrial proliferation, barely visible in brightfield
            e.mito_count = 3.0f;
            e.mito_bright = 1.6f;
            break;
        case 3:  // chromatin texture shift, subtle everywhere
            e.dna_tex_freq = 2.2f;
            e.dna_tex_contrast = 0.68f;
            break;
        case 4:  // ER expansion
            e.er_width = 1.8f;
            e.er_bright = 1.45f;
            break;
        case 5:  // rounding + shrinkage, denser field
            e.cell_scale = 0.74f;
            e.nucleus_aspect = 0.72f;
            e.extra_cells = 4;
            break;
        default: break;
    }
    return e;
}

SynthScene gen_scene(uint64_t rng_seed, int perturbation_class, Domain domain, int class_count,
                     int height, int width) {
    if (perturbation_class < 0 || perturbation_class >= class_count)
        throw usage_error("gen_scene: perturbation class " + std::to_string(perturbation_class) +
                          " out of range [0, " + std::to_string(class_count) + ")");
    SynthScene s;
    s.seed = rng_seed;
    s.domain = domain;
    s.perturbation_class = perturbation_class;
    s.class_count = class_count;
    s.height = height;
    s.width = width;
    const ClassEffects fx = class_effects(perturbation_class);

    Rng rng = Rng::split(rng_seed, 0xce11);
    int count = 4 + int(rng.below(17));  // [4, 20]
    count = std::min(20, count + fx.extra_cells);
    s.cells.reserve(size_t(count));
    for (int i = 0; i < count; ++i) {
        Cell c;
        c.cx = float(rng.uniform(0.0, double(width)));
        c.cy = float(rng.uniform(0.0, double(height)));
        double ang = rng.uniform(0.0, 6.283185307179586);
        double speed = rng.uniform(0.2, 1.0);
        c.vx = float(speed * std::cos(ang));
        c.vy = float(speed * std::sin(ang));
        c.cyto_r = float(rng.uniform(6.5, 10.5)) * fx.cell_scale;
        float aspect = std::sqrt(fx.nucleus_aspect);
        c.nuc_a = float(rng.uniform(0.34, 0.46)) * c.cyto_r * aspect;
        c.nuc_b = float(rng.uniform(0.30, 0.40)) * c.cyto_r / aspect;
        const float cap = 0.62f * c.cyto_r;
        c.nuc_a = std::min(c.nuc_a, cap);
        c.nuc_b = std::min(c.nuc_b, cap);
        c.nuc_angle = float(rng.uniform(0.0, 3.141592653589793));
        for (int ch = 0; ch < kPaintChannels; ++ch) c.organelle_seeds[size_t(ch)] = rng.next_u64();
        c.growth_rate = float(rng.uniform(0.0005, 0.0025));
        s.cells.push_back(c);
    }

    IlluminationField il;
    il.gx = float(rng.uniform(-0.08, 0.08));
    il.gy = float(rng.uniform(-0.08, 0.08));
    il.vignette = float(rng.uniform(0.0, 0.10));
    il.blur_sigma = 0.7f;
    il.contrast = 1.0f;
    il.level = 1.0f;
    if (domain == Domain::shifted) {
        il.gx += 0.15f;
        il.gy -= 0.10f;
        il.blur_sigma *= 1.6f;
        il.contrast *= 0.8f;
    }
    s.illumination = il;
    return s;
}

// --- rendering helpers ------------------------------------------------------

static float hash01(uint64_t seed, int ix, int iy) {
    uint64_t h = seed ^ (uint64_t(uint32_t(ix)) * 0x8da6b343ULL) ^
                 (uint64_t(uint32_t(iy)) * 0xd8163841ULL);
    h = splitmix64(h);
    return float(h >> 40) * (1.f / float(1 << 24));
}

// two-octave value noise in cell-local coordinates
static float value_noise(uint64_t seed, float x, float y) {
    float acc = 0.f, amp = 0.65f, freq = 1.f;
    for (int oct = 0; oct < 2; ++oct) {
        float fx = x * freq, fy = y * freq;
        int ix = int(std::floor(fx)), iy = int(std::floor(fy));
        float tx = fx - float(ix), ty = fy - float(iy);
        float sx = tx * tx * (3.f - 2.f * tx), sy = ty * ty * (3.f - 2.f * ty);
        float v00 = hash01(seed + uint64_t(oct) * 0x9e37ULL, ix, iy);
        float v10 = hash01(seed + uint64_t(oct) * 0x9e37ULL, ix + 1, iy);
        float v01 = hash01(seed + uint64_t(oct) * 0x9e37ULL, ix, iy + 1);
        float v11 = hash01(seed + uint64_t(oct) * 0x9e37ULL, ix + 1, iy + 1);
        float v = (v00 * (1 - sx) + v10 * sx) * (1 - sy) + (v01 * (1 - sx) + v11 * sx) * sy;
        acc += amp * v;
        amp *= 0.35f;
        freq *= 2.f;
    }
    return std::min(1.f, acc);
}

struct Planes {
    int h = 0, w = 0;
    std::vector<float> bf_shade, dna, rna, er, agp, mito;
    float& at(std::vector<float>& p, int y, int x) { return p[size_t(y) * w + x]; }
};

struct Blob {
    float x, y, sigma, amp;
};

struct Segment {
    float x0, y0, x1, y1, amp;
};

// additive render of one cell at a given wrap offset
static void render_cell(Planes& pl, const Cell& c, const ClassEffects& fx, float ox, float oy) {
    const float cx = c.cx + ox, cy = c.cy + oy;
    const float reach = c.cyto_r + 5.f;
    int x0 = std::max(0, int(std::floor(cx - reach))), x1 = std::min(pl.w - 1, int(std::ceil(cx + reach)));
    int y0 = std::max(0, int(std::floor(cy - reach))), y1 = std::min(pl.h - 1, int(std::ceil(cy + reach)));
    if (x0 > x1 || y0 > y1) return;

    const float ca = std::cos(c.nuc_angle), sa = std::sin(c.nuc_angle);

    // per-cell features drawn in local coordinates so they travel with the cell
    Rng rng_rna(c.organelle_seeds[kRNA]);
    std::vector<Blob> nucleoli;
    int n_nucleoli = 2 + int(rng_rna.below(3));
    for (int i = 0; i < n_nucleoli; ++i) {
        float ru = 0.55f * std::sqrt(float(rng_rna.uniform()));
        float th = float(rng_rna.uniform(0.0, 6.283185307179586));
        // position in nucleus-ellipse coordinates, mapped to canvas frame
        float ex = ru * std::cos(th) * c.nuc_a, ey = ru * std::sin(th) * c.nuc_b;
        nucleoli.push_back({ex * ca - ey * sa, ex * sa + ey * ca,
                            float(rng_rna.uniform(1.1, 1.8)), float(rng_rna.uniform(0.75, 1.0))});
    }

    Rng rng_mito(c.organelle_seeds[kMito]);
    std::vector<Blob> speckles;
    float lam = 0.10f * c.cyto_r * c.cyto_r * fx.mito_count;
    int n_speck = std::max(1, int(lam * rng_mito.uniform(0.85, 1.15)));
    for (int i = 0; i < n_speck; ++i) {
        float ru = c.cyto_r * (0.25f + 0.68f * std::sqrt(float(rng_mito.uniform())));
        float th = float(rng_mito.uniform(0.0, 6.283185307179586));
        speckles.push_back({ru * std::cos(th), ru * std::sin(th),
                            float(rng_mito.uniform(0.65, 1.1)),
                            float(rng_mito.uniform(0.55, 1.0)) * fx.mito_bright});
    }

    Rng rng_agp(c.organelle_seeds[kAGP]);
    std::vector<Segment> filaments;
    int n_fil = 5 + int(rng_agp.below(4));
    for (int i = 0; i < n_fil; ++i) {
        float th = float(rng_agp.uniform(0.0, 6.283185307179586));
        float r0 = c.cyto_r * float(rng_agp.uniform(0.15, 0.35));
        float r1 = c.cyto_r * float(rng_agp.uniform(0.75, 0.97));
        float bend = float(rng_agp.uniform(-0.5, 0.5));
        filaments.push_back({r0 * std::cos(th), r0 * std::sin(th), r1 * std::cos(th + bend),
                             r1 * std::sin(th + bend), float(rng_agp.uniform(0.35, 0.6))});
    }

    const uint64_t dna_seed = c.organelle_seeds[kDNA];
    const uint64_t er_seed = c.organelle_seeds[kER];
    const float tex_freq = 0.45f * fx.dna_tex_freq;

    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const float dx = float(x) - cx, dy = float(y) - cy;
            const float r = std::sqrt(dx * dx + dy * dy);
            if (r > reach) continue;
            // nucleus ellipse coordinate (1.0 on the boundary)
            const float ux = dx * ca + dy * sa, uy = -dx * sa + dy * ca;
            const float qa = ux / c.nuc_a, qb = uy / c.nuc_b;
            const float q = qa * qa + qb * qb;
            const float qd = std::sqrt(q);
            const float nmask = std::clamp((1.15f - qd) / 0.3f, 0.f, 1.f);
            const float cmask = std::clamp((c.cyto_r - r) / 1.5f + 0.5f, 0.f, 1.f);
            const float rim = std::exp(-((r - c.cyto_r) * (r - c.cyto_r)) / (1.3f * 1.3f));

            // DNA: chromatin-textured nucleus fill
            float tex = value_noise(dna_seed, ux * tex_freq, uy * tex_freq);
            tex = 0.5f + (tex - 0.5f) * fx.dna_tex_contrast;
            pl.at(pl.dna, y, x) += nmask * (0.55f + 0.45f * tex);

            // RNA: nucleoli + weak cytoplasm wash
            float rna = 0.12f * cmask * (1.f - 0.5f * nmask);
            for (const Blob& b : nucleoli) {
                float bx = dx - b.x, by = dy - b.y;
                rna += b.amp * std::exp(-(bx * bx + by * by) / (b.sigma * b.sigma));
            }
            pl.at(pl.rna, y, x) += rna;

            // ER: perinuclear ring
            const float ring_c = 1.45f, ring_w = 0.33f * fx.er_width;
            float ring = std::exp(-((qd - ring_c) * (qd - ring_c)) / (ring_w * ring_w));
            float er_tex = 0.6f + 0.4f * value_noise(er_seed, ux * 0.6f, uy * 0.6f);
            float er = 0.85f * fx.er_bright * ring * cmask * (1.f - 0.85f * nmask) * er_tex;
            pl.at(pl.er, y, x) += er;

            // AGP: cell boundary + filaments
            float agp = 0.7f * rim;
            for (const Segment& sgm : filaments) {
                float ex = sgm.x1 - sgm.x0, ey = sgm.y1 - sgm.y0;
                float len2 = ex * ex + ey * ey + 1e-6f;
                float tproj = std::clamp(((dx - sgm.x0) * ex + (dy - sgm.y0) * ey) / len2, 0.f, 1.f);
                float px = sgm.x0 + tproj * ex - dx, py = sgm.y0 + tproj * ey - dy;
                float d2 = px * px + py * py;
                agp += sgm.amp * std::exp(-d2 / (0.8f * 0.8f)) * cmask;
            }
            pl.at(pl.agp, y, x) += agp;

            // Mito: punctate speckles outside the nucleus
            float mito = 0.f;
            for (const Blob& b : speckles) {
                float bx = dx - b.x, by = dy - b.y;
                float d2 = bx * bx + by * by;
                if (d2 < 9.f * b.sigma * b.sigma)
                    mito += b.amp * std::exp(-d2 / (b.sigma * b.sigma));
            }
            mito *= cmask * (1.f - 0.8f * nmask);
            pl.at(pl.mito, y, x) += mito;

            // brightfield shading: translucent disc with a bright rim
            pl.at(pl.bf_shade, y, x) +=
                0.14f * rim - 0.05f * cmask * (1.f - 0.4f * nmask) + 0.04f * nmask * (0.8f + 0.4f * tex);
        }
    }
}

static void gaussian_blur(std::vector<float>& plane, int h, int w, float sigma) {
    if (sigma <= 0.05f) return;
    const int radius = std::max(1, int(std::ceil(2.5f * sigma)));
    std::vector<float> k(size_t(2 * radius + 1));
    float sum = 0.f;
    for (int i = -radius; i <= radius; ++i) {
        k[size_t(i + radius)] = std::exp(-0.5f * float(i) * float(i) / (sigma * sigma));
        sum += k[size_t(i + radius)];
    }
    for (float& v : k) v /= sum;
    std::vector<float> tmp(plane.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc = 0.f;
            for (int i = -radius; i <= radius; ++i) {
                int xx = std::clamp(x + i, 0, w - 1);
                acc += k[size_t(i + radius)] * plane[size_t(y) * w + xx];
            }
            tmp[size_t(y) * w + x] = acc;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc = 0.f;
            for (int i = -radius; i <= radius; ++i) {
                int yy = std::clamp(y + i, 0, h - 1);
                acc += k[size_t(i + radius)] * tmp[size_t(yy) * w + x];
            }
            plane[size_t(y) * w + x] = acc;
        }
    }
}

StainStack render(const SynthScene& scene) {
    const int h = scene.height, w = scene.width;
    const size_t n = size_t(h) * w;
    const ClassEffects fx = class_effects(scene.perturbation_class);
    Planes pl;
    pl.h = h;
    pl.w = w;
    pl.bf_shade.assign(n, 0.f);
    pl.dna.assign(n, 0.f);
    pl.rna.assign(n, 0.f);
    pl.er.assign(n, 0.f);
    pl.agp.assign(n, 0.f);
    pl.mito.assign(n, 0.f);

    for (const Cell& c : scene.cells) {
        for (int oy = -1; oy <= 1; ++oy)
            for (int ox = -1; ox <= 1; ++ox)
                render_cell(pl, c, fx, float(ox) * float(w), float(oy) * float(h));
    }

    const IlluminationField& il = scene.illumination;
    const float sigma = il.blur_sigma;
    gaussian_blur(pl.bf_shade, h, w, sigma);
    gaussian_blur(pl.dna, h, w, sigma * 0.8f);
    gaussian_blur(pl.rna, h, w, sigma * 0.8f);
    gaussian_blur(pl.er, h, w, sigma * 0.8f);
    gaussian_blur(pl.agp, h, w, sigma * 0.8f);
    gaussian_blur(pl.mito, h, w, sigma * 0.8f);

    StainStack out;
    out.height = h;
    out.width = w;
    out.brightfield.resize(n);
    out.paint.resize(size_t(kPaintChannels) * n);

    // static per-scene noise field: advancing a motionless scene re-renders
    // the identical image
    Rng noise = Rng::split(scene.seed, scene.domain == Domain::base ? 0xb0f1 : 0xb0f2);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const size_t i = size_t(y) * w + x;
            const float fx_n = float(x) / float(w) - 0.5f, fy_n = float(y) / float(h) - 0.5f;
            const float radial = fx_n * fx_n + fy_n * fy_n;
            const float illum = il.level * (1.f + il.gx * fx_n + il.gy * fy_n - il.vignette * radial);
            // faint organelle traces keep the paint-only classes recoverable
            // in principle from brightfield
            const float structure = pl.bf_shade[i] + 0.030f * pl.mito[i] + 0.022f * pl.er[i] +
                                    0.025f * pl.agp[i] + 0.020f * pl.rna[i];
            float bf = illum * (1.f + structure * il.contrast) + 0.025f * float(noise.normal());
            out.brightfield[i] = std::max(0.f, 400.f * bf);
        }
    }

    struct ChanSpec {
        const std::vector<float>* plane;
        float base, scale;
    };
    const ChanSpec chans[kPaintChannels] = {
        {&pl.dna, 30.f, 850.f},  {&pl.rna, 25.f, 600.f}, {&pl.er, 25.f, 550.f},
        {&pl.agp, 25.f, 600.f},  {&pl.mito, 20.f, 700.f},
    };
    for (int c = 0; c < kPaintChannels; ++c) {
        const auto& cs = chans[c];
        float* dst = out.paint.data() + size_t(c) * n;
        for (size_t i = 0; i < n; ++i) {
            float mean = cs.base + cs.scale * (*cs.plane)[i] * il.contrast;
            // Poisson-like acquisition noise: variance proportional to mean
            float sd = std::sqrt(std::max(mean, 4.f)) * 1.1f;
            dst[i] = std::max(0.f, mean + sd * float(noise.normal()));
        }
    }
    return out;
}

SynthScene advance(const SynthScene& scene) {
    SynthScene s = scene;
    s.frame_index = scene.frame_index + 1;
    s.cells.clear();
    const float wf = float(scene.width), hf = float(scene.height);
    auto wrap = [](float v, float m) {
        v = std::fmod(v, m);
        return v < 0 ? v + m : v;
    };
    const float divide_radius = 12.0f;
    for (const Cell& c0 : scene.cells) {
        Cell c = c0;
        c.cx = wrap(c.cx + c.vx, wf);
        c.cy = wrap(c.cy + c.vy, hf);
        const float grow = 1.f + c.growth_rate;
        c.cyto_r *= grow;
        c.nuc_a *= grow;
        c.nuc_b *= grow;
        const float cap = 0.62f * c.cyto_r;
        c.nuc_a = std::min(c.nuc_a, cap);
        c.nuc_b = std::min(c.nuc_b, cap);
        if (c.cyto_r <= divide_radius) {
            s.cells.push_back(c);
            continue;
        }
        // division: two daughters offset along the axis normal to travel
        float nx = -c.vy, ny = c.vx;
        float nn = std::sqrt(nx * nx + ny * ny);
        if (nn < 1e-6f) {
            nx = 1.f;
            ny = 0.f;
            nn = 1.f;
        }
        nx /= nn;
        ny /= nn;
        const float off = std::min(1.5f, 0.2f * c.cyto_r);
        for (int child = 0; child < 2; ++child) {
            Cell d = c;
            const float sgn = child == 0 ? 1.f : -1.f;
            d.cx = wrap(c.cx + sgn * off * nx, wf);
            d.cy = wrap(c.cy + sgn * off * ny, hf);
            const float rot = sgn * 0.45f;
            const float cr = std::cos(rot), sr = std::sin(rot);
            d.vx = c.vx * cr - c.vy * sr;
            d.vy = c.vx * sr + c.vy * cr;
            d.cyto_r = c.cyto_r * 0.72f;
            d.nuc_a = c.nuc_a * 0.72f;
            d.nuc_b = c.nuc_b * 0.72f;
            for (int ch = 0; ch < kPaintChannels; ++ch)
                d.organelle_seeds[size_t(ch)] =
                    mix_seed(c.organelle_seeds[size_t(ch)], uint64_t(child) + 1);
            s.cells.push_back(d);
        }
    }
    return s;
}

// --- dataset persistence -----------------------------------------------------

static json config_to_json(const DatasetConfig& c) {
    return json{{"root", c.root},
                {"n_train", c.n_train},
                {"n_test", c.n_test},
                {"classes", c.classes},
                {"height", c.height},
                {"width", c.width},
                {"seed", c.seed},
                {"domain", domain_name(c.domain)},
                {"timelapse_sequences", c.timelapse_sequences},
                {"timelapse_frames", c.timelapse_frames}};
}

static DatasetConfig config_from_json(const json& j) {
    DatasetConfig c;
    c.root = j.at("root").get<std::string>();
    c.n_train = j.at("n_train").get<int>();
    c.n_test = j.at("n_test").get<int>();
    c.classes = j.at("classes").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.domain = parse_domain(j.at("domain").get<std::string>());
    c.timelapse_sequences = j.at("timelapse_sequences").get<int>();
    c.timelapse_frames = j.at("timelapse_frames").get<int>();
    return c;
}

Tensor stack_to_tensor(const StainStack& s) {
    Tensor t({6, uint32_t(s.height), uint32_t(s.width)});
    std::copy(s.brightfield.begin(), s.brightfield.end(), t.data.begin());
    std::copy(s.paint.begin(), s.paint.end(), t.data.begin() + s.brightfield.size());
    return t;
}

void save_stack(const fs::path& dir, const StainStack& s) {
    Tensor bf({uint32_t(s.height), uint32_t(s.width)});
    bf.data = s.brightfield;
    store::write_tensor(dir / "bf.mst", bf);
    Tensor paint({kPaintChannels, uint32_t(s.height), uint32_t(s.width)});
    paint.data = s.paint;
    store::write_tensor(dir / "paint.mst", paint);
}

StainStack load_stack(const fs::path& root, const std::string& id) {
    const fs::path dir = root / "scenes" / id;
    Tensor bf = store::read_tensor(dir / "bf.mst");
    Tensor paint = store::read_tensor(dir / "paint.mst");
    if (bf.dims.size() != 2) throw data_error("bf.mst for " + id + ": expected 2-d tensor");
    if (paint.dims.size() != 3 || paint.dims[0] != kPaintChannels ||
        paint.dims[1] != bf.dims[0] || paint.dims[2] != bf.dims[1])
        throw data_error("paint.mst for " + id + ": shape does not match bf.mst");
    StainStack s;
    s.height = int(bf.dims[0]);
    s.width = int(bf.dims[1]);
    s.brightfield = std::move(bf.data);
    s.paint = std::move(paint.data);
    return s;
}

static void write_meta(const fs::path& dir, const SceneMeta& m) {
    json j{{"id", m.id},
           {"class", m.perturbation_class},
           {"domain", domain_name(m.domain)},
           {"frame_index", m.frame_index},
           {"sequence", m.sequence},
           {"split", m.split},
           {"seed", m.seed}};
    store::write_text_file(dir / "meta.json", j.dump(2) + "\n");
}

SceneMeta load_meta(const fs::path& root, const std::string& id) {
    json j = json::parse(store::read_text_file(root / "scenes" / id / "meta.json"));
    SceneMeta m;
    m.id = j.at("id").get<std::string>();
    m.perturbation_class = j.at("class").get<int>();
    m.domain = parse_domain(j.at("domain").get<std::string>());
    m.frame_index = j.at("frame_index").get<int>();
    m.sequence = j.at("sequence").get<std::string>();
    m.split = j.at("split").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    return m;
}

static std::string scene_id(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%05d", prefix, i);
    return buf;
}

void build_dataset(const DatasetConfig& cfg) {
    if (cfg.n_train < 0 || cfg.n_test < 0 || cfg.classes < 1)
        throw usage_error("build_dataset: invalid config");
    const fs::path root(cfg.root);
    std::error_code ec;
    fs::create_directories(root / "scenes", ec);
    if (ec) throw data_error("build_dataset: cannot create " + (root / "scenes").string());

    struct Item {
        std::string id;
        SceneMeta meta;
        SynthScene scene;
    };
    std::vector<Item> items;
    std::vector<int> class_counts(size_t(cfg.classes), 0);

    auto add_still = [&](const char* prefix, const char* split, int i, uint64_t stream) {
        Item it;
        it.id = scene_id(prefix, i);
        const int cls = i % cfg.classes;
        const uint64_t seed = mix_seed(cfg.seed, stream + uint64_t(i));
        it.scene = gen_scene(seed, cls, cfg.domain, cfg.classes, cfg.height, cfg.width);
        it.meta = SceneMeta{it.id, cls, cfg.domain, 0, "", split, seed};
        class_counts[size_t(cls)]++;
        items.push_back(std::move(it));
    };
    for (int i = 0; i < cfg.n_train; ++i) add_still("tr", "train", i, 0x100000);
    for (int i = 0; i < cfg.n_test; ++i) add_still("te", "test", i, 0x200000);

    std::vector<SequenceEntry> sequences;
    for (int sq = 0; sq < cfg.timelapse_sequences; ++sq) {
        SequenceEntry entry;
        entry.id = scene_id("seq", sq);
        const int cls = sq % cfg.classes;
        const uint64_t seed = mix_seed(cfg.seed, 0x300000 + uint64_t(sq));
        SynthScene sc = gen_scene(seed, cls, cfg.domain, cfg.classes, cfg.height, cfg.width);
        for (int f = 0; f < cfg.timelapse_frames; ++f) {
            Item it;
            char fbuf[48];
            std::snprintf(fbuf, sizeof fbuf, "%s_f%04d", entry.id.c_str(), f);
            it.id = fbuf;
            it.scene = sc;
            it.meta = SceneMeta{it.id, cls, cfg.domain, f, entry.id, "timelapse", seed};
            entry.frames.push_back(it.id);
            items.push_back(std::move(it));
            sc = advance(sc);
        }
        sequences.push_back(std::move(entry));
    }

    // scenes are independent; render them in parallel, write serially after
    std::vector<StainStack> rendered(items.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (long long i = 0; i < (long long)items.size(); ++i)
        rendered[size_t(i)] = render(items[size_t(i)].scene);

    for (size_t i = 0; i < items.size(); ++i) {
        const fs::path dir = root / "scenes" / items[i].id;
        fs::create_directories(dir, ec);
        if (ec) throw data_error("build_dataset: cannot create " + dir.string());
        save_stack(dir, rendered[i]);
        write_meta(dir, items[i].meta);
    }

    json manifest;
    manifest["config"] = config_to_json(cfg);
    manifest["seed"] = cfg.seed;
    manifest["classes"] = cfg.classes;
    json counts = json::object();
    for (int c = 0; c < cfg.classes; ++c)
        counts[std::to_string(c)] = class_counts[size_t(c)];
    manifest["class_counts"] = counts;
    json train = json::array(), test = json::array();
    for (const auto& it : items) {
        if (it.meta.split == "train") train.push_back(it.id);
        else if (it.meta.split == "test") test.push_back(it.id);
    }
    manifest["train"] = train;
    manifest["test"] = test;
    json seqs = json::array();
    for (const auto& sq : sequences) seqs.push_back(json{{"id", sq.id}, {"frames", sq.frames}});
    manifest["timelapse"] = seqs;
    store::write_text_file(root / "manifest.json", manifest.dump(2) + "\n");
}

Manifest load_manifest(const fs::path& root) {
    json j = json::parse(store::read_text_file(root / "manifest.json"));
    Manifest m;
    m.config = config_from_json(j.at("config"));
    for (const auto& v : j.at("train")) m.train_ids.push_back(v.get<std::string>());
    for (const auto& v : j.at("test")) m.test_ids.push_back(v.get<std::string>());
    for (const auto& v : j.at("timelapse")) {
        SequenceEntry e;
        e.id = v.at("id").get<std::string>();
        for (const auto& f : v.at("frames")) e.frames.push_back(f.get<std::string>());
        m.sequences.push_back(std::move(e));
    }
    m.class_counts.assign(size_t(m.config.classes), 0);
    const auto& counts = j.at("class_counts");
    for (int c = 0; c < m.config.classes; ++c)
        m.class_counts[size_t(c)] = counts.at(std::to_string(c)).get<int>();
    return m;
}

}  // namespace monetlab::synth
