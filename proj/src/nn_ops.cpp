#include "bix/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bix/gemm.hpp"

namespace bix {

namespace {

void require_4d(const Tensor& x, const char* op) {
    if (x.ndim() != 4) {
        throw ShapeError(std::string(op) + " expects [B,C,H,W], got " +
                         shape_str(x.shape()));
    }
}

// cols: [C*kh*kw, Ho*Wo] for one batch element.
void im2col(const real* img, int64_t C, int64_t H, int64_t W, int64_t kh,
            int64_t kw, int64_t stride, int64_t pad, int64_t Ho, int64_t Wo,
            real* cols) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t di = 0; di < kh; ++di) {
            for (int64_t dj = 0; dj < kw; ++dj) {
                real* row = cols + ((c * kh + di) * kw + dj) * (Ho * Wo);
                for (int64_t oi = 0; oi < Ho; ++oi) {
                    const int64_t si = oi * stride + di - pad;
                    if (si < 0 || si >= H) {
                        for (int64_t oj = 0; oj < Wo; ++oj) row[oi * Wo + oj] = 0;
                        continue;
                    }
                    const real* src = img + (c * H + si) * W;
                    for (int64_t oj = 0; oj < Wo; ++oj) {
                        const int64_t sj = oj * stride + dj - pad;
                        row[oi * Wo + oj] = (sj < 0 || sj >= W) ? 0 : src[sj];
                    }
                }
            }
        }
    }
}

// Scatter-add of cols back into the image; adjoint of im2col.
void col2im(const real* cols, int64_t C, int64_t H, int64_t W, int64_t kh,
            int64_t kw, int64_t stride, int64_t pad, int64_t Ho, int64_t Wo,
            real* img) {
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t di = 0; di < kh; ++di) {
            for (int64_t dj = 0; dj < kw; ++dj) {
                const real* row = cols + ((c * kh + di) * kw + dj) * (Ho * Wo);
                for (int64_t oi = 0; oi < Ho; ++oi) {
                    const int64_t si = oi * stride + di - pad;
                    if (si < 0 || si >= H) continue;
                    real* dst = img + (c * H + si) * W;
                    for (int64_t oj = 0; oj < Wo; ++oj) {
                        const int64_t sj = oj * stride + dj - pad;
                        if (sj >= 0 && sj < W) dst[sj] += row[oi * Wo + oj];
                    }
                }
            }
        }
    }
}

std::vector<real>& scratch_cols() {
    thread_local std::vector<real> buf;
    return buf;
}

bool want_grad(std::initializer_list<const Tensor*> ins) {
    if (!active_tape()) return false;
    for (const Tensor* t : ins) {
        if (t->requires_grad()) return true;
    }
    return false;
}

}  // namespace

ConvParams make_conv_params(int64_t out_ch, int64_t in_ch, int64_t kh, int64_t kw,
                            int stride, int padding, Rng& rng) {
    ConvParams p;
    const real bound = std::sqrt(real(6) / static_cast<real>(in_ch * kh * kw));
    std::vector<real> w(static_cast<size_t>(out_ch * in_ch * kh * kw));
    for (real& v : w) v = static_cast<real>(rng.uniform(-bound, bound));
    p.weight = Tensor::from_values({out_ch, in_ch, kh, kw}, std::move(w), true);
    p.bias = Tensor::zeros({out_ch}, true);
    p.stride = stride;
    p.padding = padding;
    return p;
}

ConvParams make_conv_transpose_params(int64_t in_ch, int64_t out_ch, int64_t k,
                                      int stride, Rng& rng) {
    ConvParams p;
    const real bound = std::sqrt(real(6) / static_cast<real>(in_ch * k * k));
    std::vector<real> w(static_cast<size_t>(in_ch * out_ch * k * k));
    for (real& v : w) v = static_cast<real>(rng.uniform(-bound, bound));
    p.weight = Tensor::from_values({in_ch, out_ch, k, k}, std::move(w), true);
    p.bias = Tensor::zeros({out_ch}, true);
    p.stride = stride;
    p.padding = 0;
    p.transposed = true;
    return p;
}

BatchNormState make_batch_norm(int64_t channels) {
    BatchNormState s;
    s.gamma = Tensor::full({channels}, 1.0, true);
    s.beta = Tensor::zeros({channels}, true);
    s.running_mean.assign(static_cast<size_t>(channels), 0.0);
    s.running_var.assign(static_cast<size_t>(channels), 1.0);
    return s;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    require_4d(x, "conv2d");
    if (p.transposed) throw ContractError("conv2d called with transposed params");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = p.weight.dim(0), kh = p.weight.dim(2), kw = p.weight.dim(3);
    if (p.weight.dim(1) != C) {
        throw ShapeError("conv2d channel mismatch: input C=" + std::to_string(C) +
                         ", weight expects " + std::to_string(p.weight.dim(1)));
    }
    const int64_t s = p.stride, pad = p.padding;
    const int64_t numer_h = H + 2 * pad - kh, numer_w = W + 2 * pad - kw;
    if (numer_h < 0 || numer_w < 0 || numer_h % s != 0 || numer_w % s != 0) {
        throw ShapeError("conv2d output extent is not integral for input " +
                         shape_str(x.shape()));
    }
    const int64_t Ho = numer_h / s + 1, Wo = numer_w / s + 1;
    const int64_t ckk = C * kh * kw, hw = Ho * Wo;

    bool track = want_grad({&x, &p.weight, &p.bias});
    Tensor out = make_op_output({B, O, Ho, Wo}, track);
    auto& cols = scratch_cols();
    cols.resize(static_cast<size_t>(ckk * hw));
    const real* wv = p.weight.values().data();
    const real* bv = p.bias.values().data();
    for (int64_t b = 0; b < B; ++b) {
        im2col(x.values().data() + b * C * H * W, C, H, W, kh, kw, s, pad, Ho, Wo,
               cols.data());
        real* ob = out.values().data() + b * O * hw;
        gemm_nn(O, ckk, hw, wv, cols.data(), ob, false);
        for (int64_t o = 0; o < O; ++o) {
            real* row = ob + o * hw;
            const real bias = bv[o];
            for (int64_t i = 0; i < hw; ++i) row[i] += bias;
        }
    }
    check_finite(out, "conv2d");

    if (track) {
        Tensor weight = p.weight, bias = p.bias;
        active_tape()->record(out, [x, weight, bias, out, B, C, H, W, O, kh, kw, s,
                                    pad, Ho, Wo, ckk, hw]() {
            std::vector<real> cols2(static_cast<size_t>(ckk * hw));
            std::vector<real> dcols(static_cast<size_t>(ckk * hw));
            const bool need_dx = x.requires_grad();
            const bool need_dw = weight.requires_grad();
            const bool need_db = bias.requires_grad();
            for (int64_t b = 0; b < B; ++b) {
                const real* g = out.grad().data() + b * O * hw;
                if (need_dw) {
                    im2col(x.values().data() + b * C * H * W, C, H, W, kh, kw, s,
                           pad, Ho, Wo, cols2.data());
                    gemm_nt(O, hw, ckk, g, cols2.data(), weight.raw()->grad.data(),
                            true);
                }
                if (need_db) {
                    real* db = bias.raw()->grad.data();
                    for (int64_t o = 0; o < O; ++o) {
                        real acc = 0;
                        const real* row = g + o * hw;
                        for (int64_t i = 0; i < hw; ++i) acc += row[i];
                        db[o] += acc;
                    }
                }
                if (need_dx) {
                    gemm_tn(ckk, O, hw, weight.values().data(), g, dcols.data(),
                            false);
                    col2im(dcols.data(), C, H, W, kh, kw, s, pad, Ho, Wo,
                           x.raw()->grad.data() + b * C * H * W);
                }
            }
        });
    }
    return out;
}

Tensor conv_transpose2d(const Tensor& x, const ConvParams& p) {
    require_4d(x, "conv_transpose2d");
    if (!p.transposed) {
        throw ContractError("conv_transpose2d called with non-transposed params");
    }
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = p.weight.dim(1), kh = p.weight.dim(2), kw = p.weight.dim(3);
    if (p.weight.dim(0) != C) {
        throw ShapeError("conv_transpose2d channel mismatch: input C=" +
                         std::to_string(C) + ", weight expects " +
                         std::to_string(p.weight.dim(0)));
    }
    const int64_t s = p.stride;
    const int64_t Ho = (H - 1) * s + kh, Wo = (W - 1) * s + kw;
    const int64_t okk = O * kh * kw, hw = H * W;

    bool track = want_grad({&x, &p.weight, &p.bias});
    Tensor out = make_op_output({B, O, Ho, Wo}, track);
    auto& cols = scratch_cols();
    cols.resize(static_cast<size_t>(okk * hw));
    const real* wv = p.weight.values().data();
    const real* bv = p.bias.values().data();
    for (int64_t b = 0; b < B; ++b) {
        // cols = W^T * x_b, then scatter with the matching conv's geometry
        gemm_tn(okk, C, hw, wv, x.values().data() + b * C * hw, cols.data(), false);
        real* ob = out.values().data() + b * O * Ho * Wo;
        for (int64_t o = 0; o < O; ++o) {
            const real bias = bv[o];
            for (int64_t i = 0; i < Ho * Wo; ++i) ob[o * Ho * Wo + i] = bias;
        }
        col2im(cols.data(), O, Ho, Wo, kh, kw, s, 0, H, W, ob);
    }
    check_finite(out, "conv_transpose2d");

    if (track) {
        Tensor weight = p.weight, bias = p.bias;
        active_tape()->record(out, [x, weight, bias, out, B, C, O, H, W, kh, kw, s,
                                    Ho, Wo, okk, hw]() {
            std::vector<real> gcols(static_cast<size_t>(okk * hw));
            const bool need_dx = x.requires_grad();
            const bool need_dw = weight.requires_grad();
            const bool need_db = bias.requires_grad();
            for (int64_t b = 0; b < B; ++b) {
                const real* g = out.grad().data() + b * O * Ho * Wo;
                im2col(g, O, Ho, Wo, kh, kw, s, 0, H, W, gcols.data());
                if (need_dx) {
                    gemm_nn(C, okk, hw, weight.values().data(), gcols.data(),
                            x.raw()->grad.data() + b * C * hw, true);
                }
                if (need_dw) {
                    gemm_nt(C, hw, okk, x.values().data() + b * C * hw, gcols.data(),
                            weight.raw()->grad.data(), true);
                }
                if (need_db) {
                    real* db = bias.raw()->grad.data();
                    for (int64_t o = 0; o < O; ++o) {
                        real acc = 0;
                        const real* row = g + o * Ho * Wo;
                        for (int64_t i = 0; i < Ho * Wo; ++i) acc += row[i];
                        db[o] += acc;
                    }
                }
            }
        });
    }
    return out;
}

Tensor max_pool2d(const Tensor& x) {
    require_4d(x, "max_pool2d");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) {
        throw ShapeError("max_pool2d requires even spatial extents, got " +
                         shape_str(x.shape()));
    }
    const int64_t Ho = H / 2, Wo = W / 2;
    bool track = want_grad({&x});
    Tensor out = make_op_output({B, C, Ho, Wo}, track);
    std::vector<int32_t> arg(static_cast<size_t>(B * C * Ho * Wo));
    const real* xv = x.values().data();
    real* ov = out.values().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const real* plane = xv + bc * H * W;
        for (int64_t oi = 0; oi < Ho; ++oi) {
            for (int64_t oj = 0; oj < Wo; ++oj) {
                real best = -std::numeric_limits<real>::infinity();
                int32_t bidx = 0;
                for (int64_t di = 0; di < 2; ++di) {
                    for (int64_t dj = 0; dj < 2; ++dj) {
                        const int64_t idx = (oi * 2 + di) * W + (oj * 2 + dj);
                        if (plane[idx] > best) {  // strict: first index wins ties
                            best = plane[idx];
                            bidx = static_cast<int32_t>(idx);
                        }
                    }
                }
                ov[bc * Ho * Wo + oi * Wo + oj] = best;
                arg[bc * Ho * Wo + oi * Wo + oj] = bidx;
            }
        }
    }
    check_finite(out, "max_pool2d");
    if (track) {
        active_tape()->record(out, [x, out, arg = std::move(arg), B, C, H, W, Ho,
                                    Wo]() {
            const auto& g = out.grad();
            real* gx = x.raw()->grad.data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                for (int64_t i = 0; i < Ho * Wo; ++i) {
                    gx[bc * H * W + arg[bc * Ho * Wo + i]] += g[bc * Ho * Wo + i];
                }
            }
        });
    }
    return out;
}

namespace {

struct LerpTap {
    int64_t lo, hi;
    real w_hi;  // weight of hi; lo gets (1 - w_hi)
};

std::vector<LerpTap> resize_taps(int64_t in, int64_t out) {
    std::vector<LerpTap> taps(static_cast<size_t>(out));
    const double scl = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scl - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
        const int64_t lo = static_cast<int64_t>(std::floor(src));
        const int64_t hi = std::min(lo + 1, in - 1);
        taps[o] = {lo, hi, static_cast<real>(src - static_cast<double>(lo))};
    }
    return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int64_t target_h, int64_t target_w) {
    require_4d(x, "bilinear_resize");
    if (target_h < 1 || target_w < 1) {
        throw DomainError("bilinear_resize target extents must be >= 1");
    }
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    bool track = want_grad({&x});

    if (target_h == H && target_w == W) {
        Tensor out = make_op_output({B, C, H, W}, track);
        out.values() = x.values();
        if (track) {
            active_tape()->record(out, [x, out]() {
                const auto& g = out.grad();
                auto& gx = x.raw()->grad;
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            });
        }
        return out;
    }

    Tensor out = make_op_output({B, C, target_h, target_w}, track);
    auto ytaps = resize_taps(H, target_h);
    auto xtaps = resize_taps(W, target_w);
    const real* xv = x.values().data();
    real* ov = out.values().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const real* plane = xv + bc * H * W;
        real* oplane = ov + bc * target_h * target_w;
        for (int64_t oy = 0; oy < target_h; ++oy) {
            const auto& ty = ytaps[oy];
            for (int64_t ox = 0; ox < target_w; ++ox) {
                const auto& tx = xtaps[ox];
                const real top = plane[ty.lo * W + tx.lo] * (1 - tx.w_hi) +
                                 plane[ty.lo * W + tx.hi] * tx.w_hi;
                const real bot = plane[ty.hi * W + tx.lo] * (1 - tx.w_hi) +
                                 plane[ty.hi * W + tx.hi] * tx.w_hi;
                oplane[oy * target_w + ox] = top * (1 - ty.w_hi) + bot * ty.w_hi;
            }
        }
    }
    check_finite(out, "bilinear_resize");
    if (track) {
        active_tape()->record(out, [x, out, ytaps = std::move(ytaps),
                                    xtaps = std::move(xtaps), B, C, H, W, target_h,
                                    target_w]() {
            const real* g = out.grad().data();
            real* gx = x.raw()->grad.data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                real* gplane = gx + bc * H * W;
                const real* gout = g + bc * target_h * target_w;
                for (int64_t oy = 0; oy < target_h; ++oy) {
                    const auto& ty = ytaps[oy];
                    for (int64_t ox = 0; ox < target_w; ++ox) {
                        const auto& tx = xtaps[ox];
                        const real gv = gout[oy * target_w + ox];
                        gplane[ty.lo * W + tx.lo] += gv * (1 - ty.w_hi) * (1 - tx.w_hi);
                        gplane[ty.lo * W + tx.hi] += gv * (1 - ty.w_hi) * tx.w_hi;
                        gplane[ty.hi * W + tx.lo] += gv * ty.w_hi * (1 - tx.w_hi);
                        gplane[ty.hi * W + tx.hi] += gv * ty.w_hi * tx.w_hi;
                    }
                }
            }
        });
    }
    return out;
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, bool training) {
    require_4d(x, "batch_norm");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C != state.channels()) {
        throw ShapeError("batch_norm channel mismatch: input C=" + std::to_string(C) +
                         ", state has " + std::to_string(state.channels()));
    }
    const int64_t n = B * H * W;
    const int64_t hw = H * W;
    bool track = want_grad({&x, &state.gamma, &state.beta});
    Tensor out = make_op_output({B, C, H, W}, track);
    const real* xv = x.values().data();
    real* ov = out.values().data();
    const real* gam = state.gamma.values().data();
    const real* bet = state.beta.values().data();

    std::vector<real> mean(static_cast<size_t>(C)), istd(static_cast<size_t>(C));
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            real m = 0;
            for (int64_t b = 0; b < B; ++b) {
                const real* p = xv + (b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) m += p[i];
            }
            m /= static_cast<real>(n);
            real v = 0;
            for (int64_t b = 0; b < B; ++b) {
                const real* p = xv + (b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    const real d = p[i] - m;
                    v += d * d;
                }
            }
            v /= static_cast<real>(n);
            mean[c] = m;
            istd[c] = real(1) / std::sqrt(v + state.eps);
            const real unbiased =
                n > 1 ? v * static_cast<real>(n) / static_cast<real>(n - 1) : v;
            state.running_mean[c] =
                (1 - state.momentum) * state.running_mean[c] + state.momentum * m;
            state.running_var[c] =
                (1 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            istd[c] = real(1) / std::sqrt(state.running_var[c] + state.eps);
        }
    }
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const real* p = xv + (b * C + c) * hw;
            real* q = ov + (b * C + c) * hw;
            const real m = mean[c], is = istd[c], g = gam[c], be = bet[c];
            for (int64_t i = 0; i < hw; ++i) q[i] = (p[i] - m) * is * g + be;
        }
    }
    check_finite(out, "batch_norm");

    if (track) {
        Tensor gamma = state.gamma, beta = state.beta;
        active_tape()->record(out, [x, gamma, beta, out, mean = std::move(mean),
                                    istd = std::move(istd), B, C, hw, n, training]() {
            const real* g = out.grad().data();
            const real* xv2 = x.values().data();
            const real* gam2 = gamma.values().data();
            const bool need_dx = x.requires_grad();
            for (int64_t c = 0; c < C; ++c) {
                const real m = mean[c], is = istd[c];
                real sum_g = 0, sum_gx = 0;
                for (int64_t b = 0; b < B; ++b) {
                    const real* gp = g + (b * C + c) * hw;
                    const real* xp = xv2 + (b * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) {
                        sum_g += gp[i];
                        sum_gx += gp[i] * (xp[i] - m) * is;
                    }
                }
                if (gamma.requires_grad()) gamma.raw()->grad[c] += sum_gx;
                if (beta.requires_grad()) beta.raw()->grad[c] += sum_g;
                if (!need_dx) continue;
                real* gx = x.raw()->grad.data();
                const real k = gam2[c] * is;
                if (training) {
                    const real mg = sum_g / static_cast<real>(n);
                    const real mgx = sum_gx / static_cast<real>(n);
                    for (int64_t b = 0; b < B; ++b) {
                        const real* gp = g + (b * C + c) * hw;
                        const real* xp = xv2 + (b * C + c) * hw;
                        real* dp = gx + (b * C + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) {
                            const real xhat = (xp[i] - m) * is;
                            dp[i] += k * (gp[i] - mg - xhat * mgx);
                        }
                    }
                } else {
                    for (int64_t b = 0; b < B; ++b) {
                        const real* gp = g + (b * C + c) * hw;
                        real* dp = gx + (b * C + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) dp[i] += k * gp[i];
                    }
                }
            }
        });
    }
    return out;
}

Tensor fuse(const std::vector<Tensor>& streams, FuseMode mode) {
    if (streams.empty()) throw ContractError("fuse: empty stream list");
    for (const Tensor& s : streams) require_4d(s, "fuse");

    bool track = false;
    if (active_tape()) {
        for (const Tensor& s : streams) track = track || s.requires_grad();
    }

    if (mode == FuseMode::concat) {
        const int64_t B = streams[0].dim(0), H = streams[0].dim(2),
                      W = streams[0].dim(3);
        int64_t Ctot = 0;
        for (const Tensor& s : streams) {
            if (s.dim(0) != B || s.dim(2) != H || s.dim(3) != W) {
                throw ShapeError("fuse(concat): incompatible stream shape " +
                                 shape_str(s.shape()));
            }
            Ctot += s.dim(1);
        }
        Tensor out = make_op_output({B, Ctot, H, W}, track);
        const int64_t hw = H * W;
        real* ov = out.values().data();
        int64_t coff = 0;
        for (const Tensor& s : streams) {
            const int64_t Cs = s.dim(1);
            const real* sv = s.values().data();
            for (int64_t b = 0; b < B; ++b) {
                std::copy(sv + b * Cs * hw, sv + (b + 1) * Cs * hw,
                          ov + (b * Ctot + coff) * hw);
            }
            coff += Cs;
        }
        if (track) {
            auto ins = streams;
            active_tape()->record(out, [ins, out, B, Ctot, hw]() {
                const real* g = out.grad().data();
                int64_t coff2 = 0;
                for (const Tensor& s : ins) {
                    const int64_t Cs = s.dim(1);
                    if (s.requires_grad()) {
                        real* gs = s.raw()->grad.data();
                        for (int64_t b = 0; b < B; ++b) {
                            const real* src = g + (b * Ctot + coff2) * hw;
                            real* dst = gs + b * Cs * hw;
                            for (int64_t i = 0; i < Cs * hw; ++i) dst[i] += src[i];
                        }
                    }
                    coff2 += Cs;
                }
            });
        }
        return out;
    }

    // average
    const Shape& shape = streams[0].shape();
    for (const Tensor& s : streams) {
        if (s.shape() != shape) {
            throw ShapeError("fuse(average): shape mismatch " + shape_str(s.shape()) +
                             " vs " + shape_str(shape));
        }
    }
    Tensor out = make_op_output(shape, track);
    auto& ov = out.values();
    for (const Tensor& s : streams) {
        const auto& sv = s.values();
        for (size_t i = 0; i < ov.size(); ++i) ov[i] += sv[i];
    }
    const real inv = real(1) / static_cast<real>(streams.size());
    for (real& v : ov) v *= inv;
    check_finite(out, "fuse");
    if (track) {
        auto ins = streams;
        active_tape()->record(out, [ins, out, inv]() {
            const auto& g = out.grad();
            for (const Tensor& s : ins) {
                if (!s.requires_grad()) continue;
                auto& gs = s.raw()->grad;
                for (size_t i = 0; i < g.size(); ++i) gs[i] += g[i] * inv;
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int32_t>& target) {
    require_4d(logits, "softmax_cross_entropy");
    const int64_t B = logits.dim(0), K = logits.dim(1), H = logits.dim(2),
                  W = logits.dim(3);
    const int64_t npix = B * H * W;
    if (static_cast<int64_t>(target.size()) != npix) {
        throw ShapeError("softmax_cross_entropy: target size " +
                         std::to_string(target.size()) + " != pixel count " +
                         std::to_string(npix));
    }
    for (int32_t t : target) {
        if (t < 0 || t >= K) {
            throw DomainError("softmax_cross_entropy: class index " +
                              std::to_string(t) + " out of range [0," +
                              std::to_string(K) + ")");
        }
    }
    bool track = want_grad({&logits});
    Tensor out = make_op_output({1}, track);
    std::vector<real> probs(logits.values().size());
    const real* lv = logits.values().data();
    const int64_t hw = H * W;
    real loss = 0;
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < hw; ++i) {
            real mx = -std::numeric_limits<real>::infinity();
            for (int64_t c = 0; c < K; ++c) {
                mx = std::max(mx, lv[(b * K + c) * hw + i]);
            }
            real denom = 0;
            for (int64_t c = 0; c < K; ++c) {
                const real e = std::exp(lv[(b * K + c) * hw + i] - mx);
                probs[(b * K + c) * hw + i] = e;
                denom += e;
            }
            const int32_t y = target[b * hw + i];
            loss += std::log(denom) + mx - lv[(b * K + y) * hw + i];
            const real inv = real(1) / denom;
            for (int64_t c = 0; c < K; ++c) probs[(b * K + c) * hw + i] *= inv;
        }
    }
    out.values()[0] = loss / static_cast<real>(npix);
    check_finite(out, "softmax_cross_entropy");
    if (track) {
        active_tape()->record(out, [logits, out, probs = std::move(probs), target, B,
                                    K, hw, npix]() {
            const real g = out.grad()[0] / static_cast<real>(npix);
            real* gl = logits.raw()->grad.data();
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t i = 0; i < hw; ++i) {
                    const int32_t y = target[b * hw + i];
                    for (int64_t c = 0; c < K; ++c) {
                        const real p = probs[(b * K + c) * hw + i];
                        gl[(b * K + c) * hw + i] += g * (p - (c == y ? 1 : 0));
                    }
                }
            }
        });
    }
    return out;
}

std::vector<int32_t> argmax_channel(const Tensor& logits) {
    require_4d(logits, "argmax_channel");
    const int64_t B = logits.dim(0), K = logits.dim(1), H = logits.dim(2),
                  W = logits.dim(3);
    const int64_t hw = H * W;
    std::vector<int32_t> out(static_cast<size_t>(B * hw));
    const real* lv = logits.values().data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < hw; ++i) {
            int32_t arg = 0;
            real best = lv[(b * K + 0) * hw + i];
            for (int64_t c = 1; c < K; ++c) {
                const real v = lv[(b * K + c) * hw + i];
                if (v > best) {
                    best = v;
                    arg = static_cast<int32_t>(c);
                }
            }
            out[b * hw + i] = arg;
        }
    }
    return out;
}

}  // namespace bix
