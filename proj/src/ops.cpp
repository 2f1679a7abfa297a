// Copyright 2026 The csknet Authors
// SPDX-License-Identifier: Apache-2.0

#include "csknet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <fmt/format.h>

#include "csknet/parallel.hpp"

namespace csk {
namespace {

using std::int64_t;

// C[M x N] += A[M x K] * B[K x N]
void gemm_nn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M x K] += A[M x N] * B[K x N]^T
void gemm_nt(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += arow[j] * brow[j];
            c[i * k + p] += s;
        }
    }
}

// C[K x N] += A[M x K]^T * B[M x N]
void gemm_tn(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct ConvGeometry {
    int64_t c_in, h, w, k, stride, pad, oh, ow;
    [[nodiscard]] int64_t rows() const { return c_in * k * k; }
    [[nodiscard]] int64_t cols() const { return oh * ow; }
};

void im2col(const ConvGeometry& g, const double* img, double* col) {
    for (int64_t c = 0; c < g.c_in; ++c) {
        for (int64_t ky = 0; ky < g.k; ++ky) {
            for (int64_t kx = 0; kx < g.k; ++kx) {
                double* out = col + ((c * g.k + ky) * g.k + kx) * g.cols();
                for (int64_t y = 0; y < g.oh; ++y) {
                    const int64_t iy = y * g.stride - g.pad + ky;
                    for (int64_t x = 0; x < g.ow; ++x) {
                        const int64_t ix = x * g.stride - g.pad + kx;
                        out[y * g.ow + x] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                                ? img[(c * g.h + iy) * g.w + ix]
                                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const double* col, double* img) {
    for (int64_t c = 0; c < g.c_in; ++c) {
        for (int64_t ky = 0; ky < g.k; ++ky) {
            for (int64_t kx = 0; kx < g.k; ++kx) {
                const double* in = col + ((c * g.k + ky) * g.k + kx) * g.cols();
                for (int64_t y = 0; y < g.oh; ++y) {
                    const int64_t iy = y * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int64_t x = 0; x < g.ow; ++x) {
                        const int64_t ix = x * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.w) img[(c * g.h + iy) * g.w + ix] += in[y * g.ow + x];
                    }
                }
            }
        }
    }
}

template <typename Fn>
Tensor map_values(const Tensor& x, Fn fn) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
    return out;
}

void accumulate(Tape& tape, int id, const Tensor& g) {
    if (tape.requires_grad(id)) tape.grad_buffer(id) += g;
}

}  // namespace

Var conv2d(Var input, Var weight, std::optional<Var> bias, int stride, int padding) {
    const Shape xs = input.shape();
    const Shape ws = weight.shape();
    if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
    if (xs.c != ws.c) {
        throw ShapeError(fmt::format("conv2d: input has {} channels but weight {} expects {}", xs.c,
                                     ws.str(), ws.c));
    }
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1, padding >= 0");
    if (bias && bias->shape() != Shape{1, ws.n, 1, 1}) {
        throw ShapeError(fmt::format("conv2d: bias shape {} does not match {} output channels",
                                     bias->shape().str(), ws.n));
    }
    const int64_t oh = (xs.h + 2 * padding - ws.h) / stride + 1;
    const int64_t ow = (xs.w + 2 * padding - ws.w) / stride + 1;
    if (xs.h + 2 * padding < ws.h || xs.w + 2 * padding < ws.w) {
        throw ShapeError(fmt::format("conv2d: kernel {} larger than padded input {}", ws.str(), xs.str()));
    }
    const ConvGeometry g{xs.c, xs.h, xs.w, ws.h, stride, padding, oh, ow};
    const int64_t c_out = ws.n;

    // Columns are kept for the weight gradient.
    auto cols = std::make_shared<std::vector<double>>(
        static_cast<std::size_t>(xs.n * g.rows() * g.cols()));
    Tensor out({xs.n, c_out, oh, ow});
    const Tensor& x = input.value();
    const Tensor& wt = weight.value();
    const double* bptr = bias ? bias->value().data() : nullptr;

    parallel_for(static_cast<std::size_t>(xs.n), [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t n = b; n < e; ++n) {
            double* col = cols->data() + n * g.rows() * g.cols();
            im2col(g, x.data() + n * xs.c * xs.h * xs.w, col);
            double* o = out.data() + n * c_out * g.cols();
            if (bptr) {
                for (int64_t co = 0; co < c_out; ++co)
                    std::fill(o + co * g.cols(), o + (co + 1) * g.cols(), bptr[co]);
            }
            gemm_nn(c_out, g.cols(), g.rows(), wt.data(), col, o);
        }
    });

    std::vector<int> parents{input.id(), weight.id()};
    if (bias) parents.push_back(bias->id());
    const int xid = input.id();
    const int wid = weight.id();
    const int bid = bias ? bias->id() : -1;
    return input.tape().record(
        std::move(out), std::move(parents), [=](Tape& tape, int self) {
            const Tensor& gy = tape.grad(self);
            const int64_t n_batch = xs.n;
            if (tape.requires_grad(wid)) {
                const std::size_t chunks = chunk_count(static_cast<std::size_t>(n_batch));
                std::vector<std::vector<double>> partial(
                    chunks, std::vector<double>(static_cast<std::size_t>(c_out * g.rows()), 0.0));
                parallel_for(static_cast<std::size_t>(n_batch),
                             [&](std::size_t chunk, std::size_t b, std::size_t e) {
                                 for (std::size_t n = b; n < e; ++n) {
                                     gemm_nt(c_out, g.cols(), g.rows(),
                                             gy.data() + n * c_out * g.cols(),
                                             cols->data() + n * g.rows() * g.cols(),
                                             partial[chunk].data());
                                 }
                             });
                Tensor& gw = tape.grad_buffer(wid);
                for (const auto& p : partial)
                    for (std::size_t i = 0; i < p.size(); ++i) gw[i] += p[i];
            }
            if (bid >= 0 && tape.requires_grad(bid)) {
                Tensor& gb = tape.grad_buffer(bid);
                for (int64_t n = 0; n < n_batch; ++n)
                    for (int64_t co = 0; co < c_out; ++co) {
                        const double* row = gy.data() + (n * c_out + co) * g.cols();
                        double s = 0.0;
                        for (int64_t j = 0; j < g.cols(); ++j) s += row[j];
                        gb[static_cast<std::size_t>(co)] += s;
                    }
            }
            if (tape.requires_grad(xid)) {
                Tensor& gx = tape.grad_buffer(xid);
                const Tensor& wv = tape.value(wid);
                parallel_for(static_cast<std::size_t>(n_batch), [&](std::size_t, std::size_t b,
                                                                    std::size_t e) {
                    std::vector<double> dcol(static_cast<std::size_t>(g.rows() * g.cols()));
                    for (std::size_t n = b; n < e; ++n) {
                        std::fill(dcol.begin(), dcol.end(), 0.0);
                        gemm_tn(c_out, g.cols(), g.rows(), wv.data(),
                                gy.data() + n * c_out * g.cols(), dcol.data());
                        col2im(g, dcol.data(), gx.data() + n * g.c_in * g.h * g.w);
                    }
                });
            }
        });
}

Var batch_norm(Var input, Var gamma, Var beta, BatchNormStats& stats, BnMode mode, double eps,
               double momentum) {
    const Shape s = input.shape();
    const Shape cs{1, s.c, 1, 1};
    if (gamma.shape() != cs || beta.shape() != cs || stats.mean.size() != static_cast<std::size_t>(s.c) ||
        stats.var.size() != static_cast<std::size_t>(s.c)) {
        throw ShapeError(fmt::format("batch_norm: affine/statistics length does not match {} channels", s.c));
    }
    const int64_t per_channel = s.n * s.h * s.w;
    if (mode == BnMode::kTrain && per_channel <= 1) {
        throw NumericError(fmt::format(
            "batch_norm: zero variance, train mode needs n*h*w > 1 (input {})", s.str()));
    }
    const Tensor& x = input.value();
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(s);
    Tensor xhat(s);
    std::vector<double> inv_std(static_cast<std::size_t>(s.c));
    const int64_t plane = s.h * s.w;

    for (int64_t c = 0; c < s.c; ++c) {
        double mu = 0.0;
        double var = 0.0;
        if (mode == BnMode::kTrain) {
            for (int64_t n = 0; n < s.n; ++n) {
                const double* p = x.data() + (n * s.c + c) * plane;
                for (int64_t i = 0; i < plane; ++i) mu += p[i];
            }
            mu /= static_cast<double>(per_channel);
            for (int64_t n = 0; n < s.n; ++n) {
                const double* p = x.data() + (n * s.c + c) * plane;
                for (int64_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
            }
            const double unbiased = var / static_cast<double>(per_channel - 1);
            var /= static_cast<double>(per_channel);
            stats.mean[c] = (1.0 - momentum) * stats.mean[c] + momentum * mu;
            stats.var[c] = (1.0 - momentum) * stats.var[c] + momentum * unbiased;
        } else {
            mu = stats.mean[c];
            var = stats.var[c];
        }
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[c] = is;
        for (int64_t n = 0; n < s.n; ++n) {
            const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
            for (int64_t i = 0; i < plane; ++i) {
                const double xh = (x[base + i] - mu) * is;
                xhat[base + i] = xh;
                out[base + i] = gv[c] * xh + bv[c];
            }
        }
    }

    const int xid = input.id();
    const int gid = gamma.id();
    const int bid = beta.id();
    const bool train = mode == BnMode::kTrain;
    return input.tape().record(
        std::move(out), {xid, gid, bid},
        [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tape, int self) {
            const Tensor& gy = tape.grad(self);
            const Tensor& gv2 = tape.value(gid);
            const bool need_x = tape.requires_grad(xid);
            Tensor* gx = need_x ? &tape.grad_buffer(xid) : nullptr;
            Tensor* gg = tape.requires_grad(gid) ? &tape.grad_buffer(gid) : nullptr;
            Tensor* gb = tape.requires_grad(bid) ? &tape.grad_buffer(bid) : nullptr;
            for (int64_t c = 0; c < s.c; ++c) {
                double sum_dy = 0.0;
                double sum_dy_xh = 0.0;
                for (int64_t n = 0; n < s.n; ++n) {
                    const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
                    for (int64_t i = 0; i < plane; ++i) {
                        sum_dy += gy[base + i];
                        sum_dy_xh += gy[base + i] * xhat[base + i];
                    }
                }
                if (gg) (*gg)[c] += sum_dy_xh;
                if (gb) (*gb)[c] += sum_dy;
                if (!gx) continue;
                const double scale = gv2[c] * inv_std[c];
                const double mean_dy = sum_dy / static_cast<double>(per_channel);
                const double mean_dy_xh = sum_dy_xh / static_cast<double>(per_channel);
                for (int64_t n = 0; n < s.n; ++n) {
                    const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
                    for (int64_t i = 0; i < plane; ++i) {
                        const double dy = gy[base + i];
                        (*gx)[base + i] += train
                                               ? scale * (dy - mean_dy - xhat[base + i] * mean_dy_xh)
                                               : scale * dy;
                    }
                }
            }
        });
}

Var pointwise(Pointwise op, Var input) {
    Tensor out;
    switch (op) {
        case Pointwise::kTanh:
            out = map_values(input.value(), [](double v) { return std::tanh(v); });
            break;
        case Pointwise::kSigmoid:
            out = map_values(input.value(), [](double v) {
                return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            });
            break;
        case Pointwise::kRelu:
            out = map_values(input.value(), [](double v) { return v > 0 ? v : 0.0; });
            break;
    }
    const int xid = input.id();
    return input.tape().record(std::move(out), {xid}, [op, xid](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        const Tensor& y = tape.value(self);
        Tensor& gx = tape.grad_buffer(xid);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            switch (op) {
                case Pointwise::kTanh: gx[i] += gy[i] * (1.0 - y[i] * y[i]); break;
                case Pointwise::kSigmoid: gx[i] += gy[i] * y[i] * (1.0 - y[i]); break;
                case Pointwise::kRelu: gx[i] += y[i] > 0 ? gy[i] : 0.0; break;
            }
        }
    });
}

namespace {

// Fills `out` with softmax over channels and returns per-pixel log-sum-exp.
void channel_softmax(const Tensor& z, Tensor& p, Tensor* logp) {
    const Shape s = z.shape();
    const int64_t plane = s.h * s.w;
    for (int64_t n = 0; n < s.n; ++n) {
        for (int64_t i = 0; i < plane; ++i) {
            const std::size_t base = static_cast<std::size_t>(n * s.c * plane + i);
            double mx = z[base];
            for (int64_t c = 1; c < s.c; ++c) mx = std::max(mx, z[base + c * plane]);
            double total = 0.0;
            for (int64_t c = 0; c < s.c; ++c) total += std::exp(z[base + c * plane] - mx);
            const double lse = mx + std::log(total);
            for (int64_t c = 0; c < s.c; ++c) {
                const double lp = z[base + c * plane] - lse;
                p[base + c * plane] = std::exp(lp);
                if (logp) (*logp)[base + c * plane] = lp;
            }
        }
    }
}

}  // namespace

Var softmax_channel(Var logits) {
    const Shape s = logits.shape();
    if (s.c < 1) throw ShapeError("softmax_channel: needs at least one channel");
    Tensor p(s);
    channel_softmax(logits.value(), p, nullptr);
    const int zid = logits.id();
    return logits.tape().record(std::move(p), {zid}, [s, zid](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        const Tensor& y = tape.value(self);
        Tensor& gz = tape.grad_buffer(zid);
        const int64_t plane = s.h * s.w;
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t i = 0; i < plane; ++i) {
                const std::size_t base = static_cast<std::size_t>(n * s.c * plane + i);
                double dot = 0.0;
                for (int64_t c = 0; c < s.c; ++c) dot += y[base + c * plane] * gy[base + c * plane];
                for (int64_t c = 0; c < s.c; ++c) {
                    const std::size_t k = base + c * plane;
                    gz[k] += y[k] * (gy[k] - dot);
                }
            }
    });
}

Var log_softmax_channel(Var logits) {
    const Shape s = logits.shape();
    if (s.c < 1) throw ShapeError("log_softmax_channel: needs at least one channel");
    Tensor p(s);
    Tensor logp(s);
    channel_softmax(logits.value(), p, &logp);
    const int zid = logits.id();
    return logits.tape().record(std::move(logp), {zid}, [s, zid, p = std::move(p)](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        Tensor& gz = tape.grad_buffer(zid);
        const int64_t plane = s.h * s.w;
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t i = 0; i < plane; ++i) {
                const std::size_t base = static_cast<std::size_t>(n * s.c * plane + i);
                double total = 0.0;
                for (int64_t c = 0; c < s.c; ++c) total += gy[base + c * plane];
                for (int64_t c = 0; c < s.c; ++c) {
                    const std::size_t k = base + c * plane;
                    gz[k] += gy[k] - p[k] * total;
                }
            }
    });
}

Var add(Var a, Var b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor out = a.value();
    out += b.value();
    const int aid = a.id();
    const int bid = b.id();
    return a.tape().record(std::move(out), {aid, bid}, [aid, bid](Tape& tape, int self) {
        accumulate(tape, aid, tape.grad(self));
        accumulate(tape, bid, tape.grad(self));
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    const int aid = a.id();
    const int bid = b.id();
    return a.tape().record(std::move(out), {aid, bid}, [aid, bid](Tape& tape, int self) {
        accumulate(tape, aid, tape.grad(self));
        if (tape.requires_grad(bid)) {
            Tensor& gb = tape.grad_buffer(bid);
            const Tensor& gy = tape.grad(self);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const int aid = a.id();
    const int bid = b.id();
    return a.tape().record(std::move(out), {aid, bid}, [aid, bid](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        if (tape.requires_grad(aid)) {
            Tensor& ga = tape.grad_buffer(aid);
            const Tensor& bv = tape.value(bid);
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (tape.requires_grad(bid)) {
            Tensor& gb = tape.grad_buffer(bid);
            const Tensor& av = tape.value(aid);
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
        }
    });
}

Var scalar_mul(Var a, double s) {
    Tensor out = map_values(a.value(), [s](double v) { return v * s; });
    const int aid = a.id();
    return a.tape().record(std::move(out), {aid}, [aid, s](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        Tensor& ga = tape.grad_buffer(aid);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * s;
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape first = parts.front().shape();
    int64_t total_c = 0;
    for (const Var& v : parts) {
        const Shape s = v.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw ShapeError(fmt::format("concat_channels: incompatible shapes {} and {}",
                                         first.str(), s.str()));
        }
        total_c += s.c;
    }
    const Shape os{first.n, total_c, first.h, first.w};
    const int64_t plane = first.h * first.w;
    Tensor out(os);
    std::vector<int> ids;
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const Var& v : parts) {
        const Tensor& t = v.value();
        for (int64_t n = 0; n < os.n; ++n)
            std::copy_n(t.data() + n * t.shape().c * plane, t.shape().c * plane,
                        out.data() + (n * total_c + off) * plane);
        ids.push_back(v.id());
        offsets.push_back(off);
        off += t.shape().c;
    }
    std::vector<int> parents = ids;
    return parts.front().tape().record(
        std::move(out), std::move(parents), [=](Tape& tape, int self) {
            const Tensor& gy = tape.grad(self);
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (!tape.requires_grad(ids[k])) continue;
                Tensor& g = tape.grad_buffer(ids[k]);
                const int64_t c = g.shape().c;
                for (int64_t n = 0; n < os.n; ++n) {
                    const double* src = gy.data() + (n * total_c + offsets[k]) * plane;
                    double* dst = g.data() + n * c * plane;
                    for (int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                }
            }
        });
}

Var slice_channels(Var x, int64_t start, int64_t count) {
    const Shape s = x.shape();
    if (start < 0 || count < 1 || start + count > s.c) {
        throw ShapeError(fmt::format("slice_channels: [{}, {}) outside {} channels", start,
                                     start + count, s.c));
    }
    const int64_t plane = s.h * s.w;
    Tensor out({s.n, count, s.h, s.w});
    for (int64_t n = 0; n < s.n; ++n)
        std::copy_n(x.value().data() + (n * s.c + start) * plane, count * plane,
                    out.data() + n * count * plane);
    const int xid = x.id();
    return x.tape().record(std::move(out), {xid}, [=](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        Tensor& gx = tape.grad_buffer(xid);
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t i = 0; i < count * plane; ++i)
                gx[static_cast<std::size_t>((n * s.c + start) * plane + i)] +=
                    gy[static_cast<std::size_t>(n * count * plane + i)];
    });
}

Var slice_width(Var x, int64_t start, int64_t count) {
    const Shape s = x.shape();
    if (start < 0 || count < 1 || start + count > s.w) {
        throw ShapeError(fmt::format("slice_width: [{}, {}) outside width {}", start, start + count, s.w));
    }
    Tensor out({s.n, s.c, s.h, count});
    const Tensor& xv = x.value();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < s.h; ++y)
                for (int64_t k = 0; k < count; ++k) out.at(n, c, y, k) = xv.at(n, c, y, start + k);
    const int xid = x.id();
    return x.tape().record(std::move(out), {xid}, [=](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        Tensor& gx = tape.grad_buffer(xid);
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = 0; y < s.h; ++y)
                    for (int64_t k = 0; k < count; ++k) gx.at(n, c, y, start + k) += gy.at(n, c, y, k);
    });
}

Var upsample_nearest(Var x, int factor) {
    if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h * factor, s.w * factor};
    Tensor out(os);
    const Tensor& xv = x.value();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < os.h; ++y)
                for (int64_t w = 0; w < os.w; ++w) out.at(n, c, y, w) = xv.at(n, c, y / factor, w / factor);
    const int xid = x.id();
    return x.tape().record(std::move(out), {xid}, [=](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        Tensor& gx = tape.grad_buffer(xid);
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = 0; y < os.h; ++y)
                    for (int64_t w = 0; w < os.w; ++w) gx.at(n, c, y / factor, w / factor) += gy.at(n, c, y, w);
    });
}

namespace {

struct Tap {
    int64_t i0, i1;
    double w0, w1;
};

std::vector<Tap> bilinear_taps(int64_t in, int factor) {
    std::vector<Tap> taps(static_cast<std::size_t>(in * factor));
    for (int64_t o = 0; o < in * factor; ++o) {
        double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
        src = std::max(src, 0.0);
        int64_t i0 = static_cast<int64_t>(std::floor(src));
        i0 = std::min(i0, in - 1);
        const int64_t i1 = std::min(i0 + 1, in - 1);
        const double lam = src - static_cast<double>(i0);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - lam, lam};
    }
    return taps;
}

}  // namespace

Var upsample_bilinear(Var x, int factor) {
    if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h * factor, s.w * factor};
    auto ty = bilinear_taps(s.h, factor);
    auto tx = bilinear_taps(s.w, factor);
    Tensor out(os);
    const Tensor& xv = x.value();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < os.h; ++y) {
                const Tap& a = ty[static_cast<std::size_t>(y)];
                for (int64_t w = 0; w < os.w; ++w) {
                    const Tap& b = tx[static_cast<std::size_t>(w)];
                    out.at(n, c, y, w) = a.w0 * (b.w0 * xv.at(n, c, a.i0, b.i0) + b.w1 * xv.at(n, c, a.i0, b.i1)) +
                                         a.w1 * (b.w0 * xv.at(n, c, a.i1, b.i0) + b.w1 * xv.at(n, c, a.i1, b.i1));
                }
            }
    const int xid = x.id();
    return x.tape().record(std::move(out), {xid}, [=](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        Tensor& gx = tape.grad_buffer(xid);
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = 0; y < os.h; ++y) {
                    const Tap& a = ty[static_cast<std::size_t>(y)];
                    for (int64_t w = 0; w < os.w; ++w) {
                        const Tap& b = tx[static_cast<std::size_t>(w)];
                        const double g = gy.at(n, c, y, w);
                        gx.at(n, c, a.i0, b.i0) += g * a.w0 * b.w0;
                        gx.at(n, c, a.i0, b.i1) += g * a.w0 * b.w1;
                        gx.at(n, c, a.i1, b.i0) += g * a.w1 * b.w0;
                        gx.at(n, c, a.i1, b.i1) += g * a.w1 * b.w1;
                    }
                }
    });
}

Var avg_pool(Var x, int factor) {
    const Shape s = x.shape();
    if (factor < 1 || s.h % factor != 0 || s.w % factor != 0) {
        throw ShapeError(fmt::format("avg_pool: factor {} does not divide {}", factor, s.str()));
    }
    const Shape os{s.n, s.c, s.h / factor, s.w / factor};
    const double inv = 1.0 / (factor * factor);
    Tensor out(os);
    const Tensor& xv = x.value();
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < s.h; ++y)
                for (int64_t w = 0; w < s.w; ++w) out.at(n, c, y / factor, w / factor) += xv.at(n, c, y, w) * inv;
    const int xid = x.id();
    return x.tape().record(std::move(out), {xid}, [=](Tape& tape, int self) {
        const Tensor& gy = tape.grad(self);
        Tensor& gx = tape.grad_buffer(xid);
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = 0; y < s.h; ++y)
                    for (int64_t w = 0; w < s.w; ++w) gx.at(n, c, y, w) += gy.at(n, c, y / factor, w / factor) * inv;
    });
}

Var sum(Var x) {
    double total = 0.0;
    for (double v : x.value().values()) total += v;
    const int xid = x.id();
    return x.tape().record(Tensor::scalar(total), {xid}, [xid](Tape& tape, int self) {
        const double g = tape.grad(self)[0];
        Tensor& gx = tape.grad_buffer(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
}

Var mean(Var x) {
    const std::size_t count = x.value().size();
    if (count == 0) throw ShapeError("mean: empty tensor");
    return scalar_mul(sum(x), 1.0 / static_cast<double>(count));
}

Var select(const Tensor& mask, Var a, Var b) {
    require_same_shape(a.shape(), b.shape(), "select");
    require_same_shape(mask.shape(), a.shape(), "select mask");
    Tensor out(a.shape());
    std::vector<bool> take_b(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        take_b[i] = mask[i] != 0.0;
        out[i] = take_b[i] ? b.value()[i] : a.value()[i];
    }
    const int aid = a.id();
    const int bid = b.id();
    return a.tape().record(std::move(out), {aid, bid},
                           [aid, bid, take_b = std::move(take_b)](Tape& tape, int self) {
                               const Tensor& gy = tape.grad(self);
                               Tensor* ga = tape.requires_grad(aid) ? &tape.grad_buffer(aid) : nullptr;
                               Tensor* gb = tape.requires_grad(bid) ? &tape.grad_buffer(bid) : nullptr;
                               for (std::size_t i = 0; i < gy.size(); ++i) {
                                   if (take_b[i]) {
                                       if (gb) (*gb)[i] += gy[i];
                                   } else if (ga) {
                                       (*ga)[i] += gy[i];
                                   }
                               }
                           });
}

}  // namespace csk
