#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <vector>

// Numeric kernels used by the model and the evaluation probes.
//
// Two implementations share each signature:
//   monetlab::kernels       — loop-reordered, OpenMP-parallel
//   monetlab::kernels::ref  — plain serial loops, kept as the reference the
//                             tests and the benchmark compare against
//
// Every parallel kernel assigns disjoint output slices to iterations and
// keeps each reduction in a fixed serial order, so results do not depend on
// the thread count. Backward kernels for weights/biases accumulate (+=) so a
// caller can sum over a batch; data-gradient kernels overwrite.
//
// Conventions: planes are row-major [C][H][W]; convolutions are 3x3 with
// padding 1 (stride 1 or 2) or 1x1; gemm operands are row-major.

namespace monetlab::kernels {

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Dot product over 16 independent accumulator lanes. The fixed lane/merge
// order keeps results deterministic while letting the compiler vectorize a
// reduction it must otherwise run as one serial FMA chain.
template <typename T>
inline T dot_lanes(const T* a, const T* b, int n) {
    T acc[16] = {};
    int i = 0;
    for (; i + 16 <= n; i += 16)
        for (int j = 0; j < 16; ++j) acc[j] += a[i + j] * b[i + j];
    T s = T(0);
    for (int j = 0; j < 16; ++j) s += acc[j];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

// ---------------------------------------------------------------------------
// Serial reference implementations
// ---------------------------------------------------------------------------
namespace ref {

template <typename T>
void conv3x3_fwd(const T* in, int ci_n, int h, int w, const T* wt, const T* bias, T* out,
                 int co_n, int stride) {
    const int ho = h / stride, wo = w / stride;
    for (int co = 0; co < co_n; ++co) {
        for (int yo = 0; yo < ho; ++yo) {
            for (int xo = 0; xo < wo; ++xo) {
                T acc = bias ? bias[co] : T(0);
                for (int ci = 0; ci < ci_n; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            int y = yo * stride + ky - 1;
                            int x = xo * stride + kx - 1;
                            if (y < 0 || y >= h || x < 0 || x >= w) continue;
                            acc += wt[((size_t(co) * ci_n + ci) * 3 + ky) * 3 + kx] *
                                   in[(size_t(ci) * h + y) * w + x];
                        }
                    }
                }
                out[(size_t(co) * ho + yo) * wo + xo] = acc;
            }
        }
    }
}

template <typename T>
void conv3x3_bwd_data(const T* gout, int co_n, int h, int w, const T* wt, T* gin, int ci_n,
                      int stride) {
    const int ho = h / stride, wo = w / stride;
    for (size_t i = 0; i < size_t(ci_n) * h * w; ++i) gin[i] = T(0);
    for (int co = 0; co < co_n; ++co) {
        for (int yo = 0; yo < ho; ++yo) {
            for (int xo = 0; xo < wo; ++xo) {
                T g = gout[(size_t(co) * ho + yo) * wo + xo];
                for (int ci = 0; ci < ci_n; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            int y = yo * stride + ky - 1;
                            int x = xo * stride + kx - 1;
                            if (y < 0 || y >= h || x < 0 || x >= w) continue;
                            gin[(size_t(ci) * h + y) * w + x] +=
                                wt[((size_t(co) * ci_n + ci) * 3 + ky) * 3 + kx] * g;
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3x3_bwd_wb(const T* gout, int co_n, const T* in, int ci_n, int h, int w, T* gwt,
                    T* gbias, int stride) {
    const int ho = h / stride, wo = w / stride;
    for (int co = 0; co < co_n; ++co) {
        for (int yo = 0; yo < ho; ++yo)
            for (int xo = 0; xo < wo; ++xo)
                gbias[co] += gout[(size_t(co) * ho + yo) * wo + xo];
        for (int ci = 0; ci < ci_n; ++ci) {
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    T acc = T(0);
                    for (int yo = 0; yo < ho; ++yo) {
                        for (int xo = 0; xo < wo; ++xo) {
                            int y = yo * stride + ky - 1;
                            int x = xo * stride + kx - 1;
                            if (y < 0 || y >= h || x < 0 || x >= w) continue;
                            acc += gout[(size_t(co) * ho + yo) * wo + xo] *
                                   in[(size_t(ci) * h + y) * w + x];
                        }
                    }
                    gwt[((size_t(co) * ci_n + ci) * 3 + ky) * 3 + kx] += acc;
                }
            }
        }
    }
}

template <typename T>
void conv1x1_fwd(const T* in, int ci_n, int n, const T* wt, const T* bias, T* out, int co_n) {
    for (int co = 0; co < co_n; ++co) {
        for (int p = 0; p < n; ++p) {
            T acc = bias ? bias[co] : T(0);
            for (int ci = 0; ci < ci_n; ++ci)
                acc += wt[size_t(co) * ci_n + ci] * in[size_t(ci) * n + p];
            out[size_t(co) * n + p] = acc;
        }
    }
}

template <typename T>
void conv1x1_bwd_data(const T* gout, int co_n, int n, const T* wt, T* gin, int ci_n) {
    for (int ci = 0; ci < ci_n; ++ci) {
        for (int p = 0; p < n; ++p) {
            T acc = T(0);
            for (int co = 0; co < co_n; ++co)
                acc += wt[size_t(co) * ci_n + ci] * gout[size_t(co) * n + p];
            gin[size_t(ci) * n + p] = acc;
        }
    }
}

template <typename T>
void conv1x1_bwd_wb(const T* gout, int co_n, const T* in, int ci_n, int n, T* gwt, T* gbias) {
    for (int co = 0; co < co_n; ++co) {
        T bacc = T(0);
        for (int p = 0; p < n; ++p) bacc += gout[size_t(co) * n + p];
        gbias[co] += bacc;
        for (int ci = 0; ci < ci_n; ++ci) {
            T acc = T(0);
            for (int p = 0; p < n; ++p)
                acc += gout[size_t(co) * n + p] * in[size_t(ci) * n + p];
            gwt[size_t(co) * ci_n + ci] += acc;
        }
    }
}

template <typename T>
void silu_fwd(const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] * sigmoid(x[i]);
}

template <typename T>
void silu_bwd(const T* gy, const T* x, T* gx, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        T s = sigmoid(x[i]);
        gx[i] = gy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
}

template <typename T>
void groupnorm_fwd(const T* x, int c, int n, int groups, T eps, const T* gamma, const T* beta,
                   T* y, T* save_mean, T* save_invstd) {
    const int s = c / groups;
    for (int g = 0; g < groups; ++g) {
        double sum = 0.0, sq = 0.0;
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            for (int p = 0; p < n; ++p) {
                double v = double(x[size_t(cc) * n + p]);
                sum += v;
                sq += v * v;
            }
        }
        double m = double(s) * n;
        double mean = sum / m;
        double var = sq / m - mean * mean;
        if (var < 0) var = 0;
        T invstd = T(1.0 / std::sqrt(var + double(eps)));
        save_mean[g] = T(mean);
        save_invstd[g] = invstd;
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            for (int p = 0; p < n; ++p) {
                T xhat = (x[size_t(cc) * n + p] - T(mean)) * invstd;
                y[size_t(cc) * n + p] = gamma[cc] * xhat + beta[cc];
            }
        }
    }
}

template <typename T>
void groupnorm_bwd(const T* gy, const T* x, int c, int n, int groups, const T* gamma,
                   const T* save_mean, const T* save_invstd, T* gx, T* ggamma, T* gbeta) {
    const int s = c / groups;
    for (int g = 0; g < groups; ++g) {
        const T mean = save_mean[g], invstd = save_invstd[g];
        const double m = double(s) * n;
        double sum_gxh = 0.0, sum_gxh_xh = 0.0;
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            double gg = 0.0, gb = 0.0;
            for (int p = 0; p < n; ++p) {
                size_t i = size_t(cc) * n + p;
                T xhat = (x[i] - mean) * invstd;
                T gxh = gy[i] * gamma[cc];
                gg += double(gy[i]) * double(xhat);
                gb += double(gy[i]);
                sum_gxh += double(gxh);
                sum_gxh_xh += double(gxh) * double(xhat);
            }
            ggamma[cc] += T(gg);
            gbeta[cc] += T(gb);
        }
        T c1 = T(sum_gxh / m), c2 = T(sum_gxh_xh / m);
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            for (int p = 0; p < n; ++p) {
                size_t i = size_t(cc) * n + p;
                T xhat = (x[i] - mean) * invstd;
                T gxh = gy[i] * gamma[cc];
                gx[i] = invstd * (gxh - c1 - xhat * c2);
            }
        }
    }
}

template <typename T>
void upsample2x_fwd(const T* in, int c, int h, int w, T* out) {
    for (int cc = 0; cc < c; ++cc)
        for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
                out[(size_t(cc) * 2 * h + y) * 2 * w + x] =
                    in[(size_t(cc) * h + y / 2) * w + x / 2];
}

template <typename T>
void upsample2x_bwd(const T* gout, int c, int h, int w, T* gin) {
    // h, w are the *input* (coarse) dims
    for (int cc = 0; cc < c; ++cc) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                T acc = T(0);
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += gout[(size_t(cc) * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx];
                gin[(size_t(cc) * h + y) * w + x] = acc;
            }
        }
    }
}

// C[m,n] = sum_k A[k,m] * B[k,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += a[size_t(kk) * m + i] * b[size_t(kk) * n + j];
            c[size_t(i) * n + j] = acc;
        }
}

// C[m,n] = sum_k A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += a[size_t(i) * k + kk] * b[size_t(kk) * n + j];
            c[size_t(i) * n + j] = acc;
        }
}

// C[m,n] = sum_k A[m,k] * B[n,k]
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T acc = T(0);
            for (int kk = 0; kk < k; ++kk) acc += a[size_t(i) * k + kk] * b[size_t(j) * k + kk];
            c[size_t(i) * n + j] = acc;
        }
}

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const T* xi = x + size_t(i) * cols;
        T* yi = y + size_t(i) * cols;
        T mx = xi[0];
        for (int j = 1; j < cols; ++j)
            if (xi[j] > mx) mx = xi[j];
        T sum = T(0);
        for (int j = 0; j < cols; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        T inv = T(1) / sum;
        for (int j = 0; j < cols; ++j) yi[j] *= inv;
    }
}

template <typename T>
void softmax_rows_bwd(const T* gy, const T* y, T* gx, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        const T* gyi = gy + size_t(i) * cols;
        const T* yi = y + size_t(i) * cols;
        T* gxi = gx + size_t(i) * cols;
        T dot = T(0);
        for (int j = 0; j < cols; ++j) dot += gyi[j] * yi[j];
        for (int j = 0; j < cols; ++j) gxi[j] = yi[j] * (gyi[j] - dot);
    }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// OpenMP implementations
// ---------------------------------------------------------------------------

namespace detail {

// Lowered patch matrix: col[(ci*9 + ky*3 + kx), yo*wo + xo] = padded input.
// One scratch buffer per thread; convolutions at every stride and plane size
// then run through the same dense inner loops.
template <typename T>
std::vector<T>& col_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

template <typename T>
void im2col(const T* in, int ci_n, int h, int w, int stride, T* col) {
    const int ho = h / stride, wo = w / stride, n = ho * wo;
    for (int ci = 0; ci < ci_n; ++ci) {
        const T* ip = in + size_t(ci) * h * w;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const int dy = ky - 1, dx = kx - 1;
                T* crow = col + (size_t(ci) * 9 + size_t(ky) * 3 + kx) * n;
                for (int yo = 0; yo < ho; ++yo) {
                    const int y = yo * stride + dy;
                    T* dst = crow + size_t(yo) * wo;
                    if (y < 0 || y >= h) {
                        for (int xo = 0; xo < wo; ++xo) dst[xo] = T(0);
                        continue;
                    }
                    const T* src = ip + size_t(y) * w;
                    if (stride == 1) {
                        // shifted row copy with zero edges
                        if (dx < 0) {
                            dst[0] = T(0);
                            std::memcpy(dst + 1, src, sizeof(T) * size_t(w - 1));
                        } else if (dx > 0) {
                            std::memcpy(dst, src + 1, sizeof(T) * size_t(w - 1));
                            dst[w - 1] = T(0);
                        } else {
                            std::memcpy(dst, src, sizeof(T) * size_t(w));
                        }
                    } else {
                        for (int xo = 0; xo < wo; ++xo) {
                            const int x = xo * stride + dx;
                            dst[xo] = (x < 0 || x >= w) ? T(0) : src[x];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int ci_n, int h, int w, int stride, T* gin) {
    const int ho = h / stride, wo = w / stride, n = ho * wo;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < ci_n; ++ci) {
        T* gp = gin + size_t(ci) * h * w;
        for (int i = 0; i < h * w; ++i) gp[i] = T(0);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const int dy = ky - 1, dx = kx - 1;
                const T* crow = col + (size_t(ci) * 9 + size_t(ky) * 3 + kx) * n;
                for (int yo = 0; yo < ho; ++yo) {
                    const int y = yo * stride + dy;
                    if (y < 0 || y >= h) continue;
                    const T* src = crow + size_t(yo) * wo;
                    T* dst = gp + size_t(y) * w;
                    for (int xo = 0; xo < wo; ++xo) {
                        const int x = xo * stride + dx;
                        if (x >= 0 && x < w) dst[x] += src[xo];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// On wide stride-1 planes a direct taps-outer loop beats the lowered form
// (the col matrix overflows L2); small planes and stride 2 go through im2col.
constexpr int kDirectConvMinWidth = 48;

template <typename T>
void conv3x3_fwd(const T* in, int ci_n, int h, int w, const T* wt, const T* bias, T* out,
                 int co_n, int stride) {
    const int ho = h / stride, wo = w / stride, n = ho * wo;
    if (stride == 1 && w >= kDirectConvMinWidth) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < co_n; ++co) {
            T* op = out + size_t(co) * h * w;
            const T bv = bias ? bias[co] : T(0);
            for (int i = 0; i < h * w; ++i) op[i] = bv;
            for (int ci = 0; ci < ci_n; ++ci) {
                const T* ip = in + size_t(ci) * h * w;
                const T* wp = wt + (size_t(co) * ci_n + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    const int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
                    for (int kx = 0; kx < 3; ++kx) {
                        const T wv = wp[ky * 3 + kx];
                        const int dx = kx - 1;
                        const int x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
                        for (int y = y0; y < y1; ++y) {
                            const T* irow = ip + size_t(y + dy) * w + dx;
                            T* orow = op + size_t(y) * w;
                            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                        }
                    }
                }
            }
        }
        return;
    }
    const int k = ci_n * 9;
    auto& col = detail::col_scratch<T>();
    col.resize(size_t(k) * n);
    detail::im2col(in, ci_n, h, w, stride, col.data());
#pragma omp parallel for schedule(static)
    for (int co = 0; co < co_n; ++co) {
        T* op = out + size_t(co) * n;
        const T bv = bias ? bias[co] : T(0);
        for (int p = 0; p < n; ++p) op[p] = bv;
        const T* wp = wt + size_t(co) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T wv = wp[kk];
            const T* cp = col.data() + size_t(kk) * n;
            for (int p = 0; p < n; ++p) op[p] += wv * cp[p];
        }
    }
}

template <typename T>
void conv3x3_bwd_data(const T* gout, int co_n, int h, int w, const T* wt, T* gin, int ci_n,
                      int stride) {
    const int ho = h / stride, wo = w / stride, n = ho * wo;
    if (stride == 1 && w >= kDirectConvMinWidth) {
        // gather form: gin[ci,y,x] = sum_{co,ky,kx} w[co,ci,ky,kx]*gout[co,y-ky+1,x-kx+1]
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < ci_n; ++ci) {
            T* gp = gin + size_t(ci) * h * w;
            for (int i = 0; i < h * w; ++i) gp[i] = T(0);
            for (int co = 0; co < co_n; ++co) {
                const T* op = gout + size_t(co) * h * w;
                const T* wp = wt + (size_t(co) * ci_n + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = 1 - ky;
                    const int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
                    for (int kx = 0; kx < 3; ++kx) {
                        const T wv = wp[ky * 3 + kx];
                        const int dx = 1 - kx;
                        const int x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
                        for (int y = y0; y < y1; ++y) {
                            const T* orow = op + size_t(y + dy) * w + dx;
                            T* grow = gp + size_t(y) * w;
                            for (int x = x0; x < x1; ++x) grow[x] += wv * orow[x];
                        }
                    }
                }
            }
        }
        return;
    }
    const int k = ci_n * 9;
    auto& col = detail::col_scratch<T>();
    col.resize(size_t(k) * n);
    // col_g[kk, :] = sum_co w[co, kk] * gout[co, :]
#pragma omp parallel for schedule(static)
    for (int kk = 0; kk < k; ++kk) {
        T* cp = col.data() + size_t(kk) * n;
        for (int p = 0; p < n; ++p) cp[p] = T(0);
        for (int co = 0; co < co_n; ++co) {
            const T wv = wt[size_t(co) * k + kk];
            const T* op = gout + size_t(co) * n;
            for (int p = 0; p < n; ++p) cp[p] += wv * op[p];
        }
    }
    detail::col2im_add(col.data(), ci_n, h, w, stride, gin);
}

template <typename T>
void conv3x3_bwd_wb(const T* gout, int co_n, const T* in, int ci_n, int h, int w, T* gwt,
                    T* gbias, int stride) {
    const int ho = h / stride, wo = w / stride, n = ho * wo;
    if (stride == 1 && w >= kDirectConvMinWidth) {
#pragma omp parallel for schedule(static)
        for (int co = 0; co < co_n; ++co) {
            const T* op = gout + size_t(co) * n;
            T bacc = T(0);
            for (int p = 0; p < n; ++p) bacc += op[p];
            gbias[co] += bacc;
            for (int ci = 0; ci < ci_n; ++ci) {
                const T* ip = in + size_t(ci) * h * w;
                T* gw = gwt + (size_t(co) * ci_n + ci) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dy = ky - 1, dx = kx - 1;
                        const int y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? h - 1 : h;
                        const int x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? w - 1 : w;
                        T acc = T(0);
                        for (int y = y0; y < y1; ++y)
                            acc += dot_lanes(op + size_t(y) * w + x0,
                                             ip + size_t(y + dy) * w + dx + x0, x1 - x0);
                        gw[ky * 3 + kx] += acc;
                    }
                }
            }
        }
        return;
    }
    const int k = ci_n * 9;
    auto& col = detail::col_scratch<T>();
    col.resize(size_t(k) * n);
    detail::im2col(in, ci_n, h, w, stride, col.data());
#pragma omp parallel for schedule(static)
    for (int co = 0; co < co_n; ++co) {
        const T* op = gout + size_t(co) * n;
        T bacc = T(0);
        for (int p = 0; p < n; ++p) bacc += op[p];
        gbias[co] += bacc;
        T* gw = gwt + size_t(co) * k;
        for (int kk = 0; kk < k; ++kk) gw[kk] += dot_lanes(op, col.data() + size_t(kk) * n, n);
    }
}

template <typename T>
void conv1x1_fwd(const T* in, int ci_n, int n, const T* wt, const T* bias, T* out, int co_n) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < co_n; ++co) {
        T* op = out + size_t(co) * n;
        const T bv = bias ? bias[co] : T(0);
        for (int p = 0; p < n; ++p) op[p] = bv;
        for (int ci = 0; ci < ci_n; ++ci) {
            const T wv = wt[size_t(co) * ci_n + ci];
            const T* ip = in + size_t(ci) * n;
            for (int p = 0; p < n; ++p) op[p] += wv * ip[p];
        }
    }
}

template <typename T>
void conv1x1_bwd_data(const T* gout, int co_n, int n, const T* wt, T* gin, int ci_n) {
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < ci_n; ++ci) {
        T* gp = gin + size_t(ci) * n;
        for (int p = 0; p < n; ++p) gp[p] = T(0);
        for (int co = 0; co < co_n; ++co) {
            const T wv = wt[size_t(co) * ci_n + ci];
            const T* op = gout + size_t(co) * n;
            for (int p = 0; p < n; ++p) gp[p] += wv * op[p];
        }
    }
}

template <typename T>
void conv1x1_bwd_wb(const T* gout, int co_n, const T* in, int ci_n, int n, T* gwt, T* gbias) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < co_n; ++co) {
        const T* op = gout + size_t(co) * n;
        T bacc = T(0);
        for (int p = 0; p < n; ++p) bacc += op[p];
        gbias[co] += bacc;
        for (int ci = 0; ci < ci_n; ++ci) {
            const T* ip = in + size_t(ci) * n;
            gwt[size_t(co) * ci_n + ci] += dot_lanes(op, ip, n);
        }
    }
}

template <typename T>
void silu_fwd(const T* x, T* y, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) y[i] = x[i] * sigmoid(x[i]);
}

template <typename T>
void silu_bwd(const T* gy, const T* x, T* gx, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) {
        T s = sigmoid(x[i]);
        gx[i] = gy[i] * s * (T(1) + x[i] * (T(1) - s));
    }
}

template <typename T>
void groupnorm_fwd(const T* x, int c, int n, int groups, T eps, const T* gamma, const T* beta,
                   T* y, T* save_mean, T* save_invstd) {
#pragma omp parallel for schedule(static)
    for (int g = 0; g < groups; ++g) {
        const int s = c / groups;
        double sum = 0.0, sq = 0.0;
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            const T* xp = x + size_t(cc) * n;
            for (int p = 0; p < n; ++p) {
                double v = double(xp[p]);
                sum += v;
                sq += v * v;
            }
        }
        double m = double(s) * n;
        double mean = sum / m;
        double var = sq / m - mean * mean;
        if (var < 0) var = 0;
        T invstd = T(1.0 / std::sqrt(var + double(eps)));
        save_mean[g] = T(mean);
        save_invstd[g] = invstd;
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            const T* xp = x + size_t(cc) * n;
            T* yp = y + size_t(cc) * n;
            const T ga = gamma[cc], be = beta[cc], mu = T(mean);
            for (int p = 0; p < n; ++p) yp[p] = ga * (xp[p] - mu) * invstd + be;
        }
    }
}

template <typename T>
void groupnorm_bwd(const T* gy, const T* x, int c, int n, int groups, const T* gamma,
                   const T* save_mean, const T* save_invstd, T* gx, T* ggamma, T* gbeta) {
#pragma omp parallel for schedule(static)
    for (int g = 0; g < groups; ++g) {
        const int s = c / groups;
        const T mean = save_mean[g], invstd = save_invstd[g];
        const double m = double(s) * n;
        double sum_gxh = 0.0, sum_gxh_xh = 0.0;
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            const T* xp = x + size_t(cc) * n;
            const T* gp = gy + size_t(cc) * n;
            double gg = 0.0, gb = 0.0;
            const T ga = gamma[cc];
            for (int p = 0; p < n; ++p) {
                T xhat = (xp[p] - mean) * invstd;
                T gxh = gp[p] * ga;
                gg += double(gp[p]) * double(xhat);
                gb += double(gp[p]);
                sum_gxh += double(gxh);
                sum_gxh_xh += double(gxh) * double(xhat);
            }
            ggamma[cc] += T(gg);
            gbeta[cc] += T(gb);
        }
        const T c1 = T(sum_gxh / m), c2 = T(sum_gxh_xh / m);
        for (int cc = g * s; cc < (g + 1) * s; ++cc) {
            const T* xp = x + size_t(cc) * n;
            const T* gp = gy + size_t(cc) * n;
            T* op = gx + size_t(cc) * n;
            const T ga = gamma[cc];
            for (int p = 0; p < n; ++p) {
                T xhat = (xp[p] - mean) * invstd;
                op[p] = invstd * (gp[p] * ga - c1 - xhat * c2);
            }
        }
    }
}

template <typename T>
void upsample2x_fwd(const T* in, int c, int h, int w, T* out) {
#pragma omp parallel for schedule(static)
    for (int cc = 0; cc < c; ++cc) {
        const T* ip = in + size_t(cc) * h * w;
        T* op = out + size_t(cc) * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y) {
            const T* irow = ip + size_t(y / 2) * w;
            T* orow = op + size_t(y) * 2 * w;
            for (int x = 0; x < 2 * w; ++x) orow[x] = irow[x / 2];
        }
    }
}

template <typename T>
void upsample2x_bwd(const T* gout, int c, int h, int w, T* gin) {
#pragma omp parallel for schedule(static)
    for (int cc = 0; cc < c; ++cc) {
        const T* op = gout + size_t(cc) * 4 * h * w;
        T* gp = gin + size_t(cc) * h * w;
        for (int y = 0; y < h; ++y) {
            const T* r0 = op + size_t(2 * y) * 2 * w;
            const T* r1 = op + size_t(2 * y + 1) * 2 * w;
            T* grow = gp + size_t(y) * w;
            for (int x = 0; x < w; ++x)
                grow[x] = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
        }
    }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* cp = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) cp[j] = T(0);
        for (int kk = 0; kk < k; ++kk) {
            const T av = a[size_t(kk) * m + i];
            const T* bp = b + size_t(kk) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bp[j];
        }
    }
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* cp = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) cp[j] = T(0);
        const T* ap = a + size_t(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T av = ap[kk];
            const T* bp = b + size_t(kk) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bp[j];
        }
    }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int n, int k) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* ap = a + size_t(i) * k;
        T* cp = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) cp[j] = dot_lanes(ap, b + size_t(j) * k, k);
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const T* xi = x + size_t(i) * cols;
        T* yi = y + size_t(i) * cols;
        T mx = xi[0];
        for (int j = 1; j < cols; ++j)
            if (xi[j] > mx) mx = xi[j];
        T sum = T(0);
        for (int j = 0; j < cols; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            sum += yi[j];
        }
        T inv = T(1) / sum;
        for (int j = 0; j < cols; ++j) yi[j] *= inv;
    }
}

template <typename T>
void softmax_rows_bwd(const T* gy, const T* y, T* gx, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const T* gyi = gy + size_t(i) * cols;
        const T* yi = y + size_t(i) * cols;
        T* gxi = gx + size_t(i) * cols;
        T dot = T(0);
        for (int j = 0; j < cols; ++j) dot += gyi[j] * yi[j];
        for (int j = 0; j < cols; ++j) gxi[j] = yi[j] * (gyi[j] - dot);
    }
}

// Dense vector layer, used by the time-embedding MLP and classifier heads.
// Small enough that one implementation serves both namespaces.
template <typename T>
void linear_fwd(const T* x, int in_n, const T* wt, const T* bias, T* y, int out_n) {
    for (int o = 0; o < out_n; ++o) {
        T acc = bias ? bias[o] : T(0);
        const T* wp = wt + size_t(o) * in_n;
        for (int i = 0; i < in_n; ++i) acc += wp[i] * x[i];
        y[o] = acc;
    }
}

template <typename T>
void linear_bwd(const T* gy, const T* x, int in_n, const T* wt, int out_n, T* gx, T* gwt,
                T* gbias) {
    if (gx)
        for (int i = 0; i < in_n; ++i) {
            T acc = T(0);
            for (int o = 0; o < out_n; ++o) acc += wt[size_t(o) * in_n + i] * gy[o];
            gx[i] = acc;
        }
    for (int o = 0; o < out_n; ++o) {
        gbias[o] += gy[o];
        T* gw = gwt + size_t(o) * in_n;
        for (int i = 0; i < in_n; ++i) gw[i] += gy[o] * x[i];
    }
}

}  // namespace monetlab::kernels
