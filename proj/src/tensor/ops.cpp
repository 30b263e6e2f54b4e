#include "ddn/tensor/ops.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ddn {

namespace {

using ConstMap = Eigen::Map<const RowMatrix<float>>;
using MutMap = Eigen::Map<RowMatrix<float>>;

Tape& common_tape(std::string_view op, std::initializer_list<const Var*> inputs) {
    Tape* tape = nullptr;
    for (const Var* v : inputs) {
        if (!v->valid()) throw std::invalid_argument(fmt::format("{}: uninitialized input", op));
        if (tape == nullptr) tape = &v->tape();
        else if (tape != &v->tape()) throw std::invalid_argument(fmt::format("{}: inputs live on different tapes", op));
    }
    return *tape;
}

bool any_grad(std::initializer_list<const Var*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Var* v) { return v->requires_grad(); });
}

void require_rank(std::string_view op, const Var& v, int rank) {
    if (v.value().rank() != rank) {
        throw_shape_error(op, {v.shape()}, fmt::format("expected rank {}", rank));
    }
}

// Adds `g` into the gradient buffer of `v` when it participates in backward.
void push_grad(const Var& v, std::span<const float> g) {
    if (!v.requires_grad()) return;
    auto& buf = v.node().grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[static_cast<Index>(i)] += g[i];
}

Array& grad_of(const Var& v) { return v.node().grad_buffer(); }

}  // namespace

namespace kernels {

void im2col3x3(std::span<const float> x, Index cin, Index h, Index w, std::span<float> cols) {
    const Index hw = h * w;
    for (Index c = 0; c < cin; ++c) {
        const float* src = x.data() + c * hw;
        for (Index ky = 0; ky < 3; ++ky) {
            for (Index kx = 0; kx < 3; ++kx) {
                float* dst = cols.data() + ((c * 3 + ky) * 3 + kx) * hw;
                const Index dy = ky - 1, dx = kx - 1;
                for (Index y = 0; y < h; ++y) {
                    float* row = dst + y * w;
                    const Index sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(row, row + w, 0.0f);
                        continue;
                    }
                    const float* srow = src + sy * w;
                    const Index x0 = std::max<Index>(0, -dx), x1 = std::min<Index>(w, w - dx);
                    std::fill(row, row + x0, 0.0f);
                    std::copy(srow + x0 + dx, srow + x1 + dx, row + x0);
                    std::fill(row + x1, row + w, 0.0f);
                }
            }
        }
    }
}

void col2im3x3(std::span<const float> cols, Index cin, Index h, Index w, std::span<float> x) {
    const Index hw = h * w;
    for (Index c = 0; c < cin; ++c) {
        float* dst = x.data() + c * hw;
        for (Index ky = 0; ky < 3; ++ky) {
            for (Index kx = 0; kx < 3; ++kx) {
                const float* src = cols.data() + ((c * 3 + ky) * 3 + kx) * hw;
                const Index dy = ky - 1, dx = kx - 1;
                for (Index y = 0; y < h; ++y) {
                    const Index sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const Index x0 = std::max<Index>(0, -dx), x1 = std::min<Index>(w, w - dx);
                    const float* row = src + y * w;
                    float* drow = dst + sy * w;
                    for (Index xx = x0; xx < x1; ++xx) drow[xx + dx] += row[xx];
                }
            }
        }
    }
}

void conv_forward(std::span<const float> x, Index cin, Index h, Index w, std::span<const float> weight,
                  std::span<const float> bias, Index cout, Index ksize, std::span<float> out,
                  std::vector<float>& scratch) {
    const Index hw = h * w;
    const Index depth = cin * ksize * ksize;
    const float* cols = x.data();
    if (ksize == 3) {
        scratch.resize(static_cast<std::size_t>(depth * hw));
        im2col3x3(x, cin, h, w, scratch);
        cols = scratch.data();
    }
    MutMap o(out.data(), cout, hw);
    o.noalias() = ConstMap(weight.data(), cout, depth) * ConstMap(cols, depth, hw);
    for (Index c = 0; c < cout; ++c) o.row(c).array() += bias[static_cast<std::size_t>(c)];
}

}  // namespace kernels

namespace {

struct ConvGeometry {
    Index n, cin, h, w, cout, ksize;
    Index hw() const { return h * w; }
    Index depth() const { return cin * ksize * ksize; }
};

// Shared backward for conv2d / slot_conv2d: `weight_of(n)` yields the weight
// offset for sample n.
template <typename WeightOffset>
void conv_backward(const ConvGeometry& g, const Var& x, const Var& wv, const Var& bv, const Array& gout,
                   WeightOffset weight_of) {
    const Index hw = g.hw(), depth = g.depth();
    std::vector<float> cols, dcols(static_cast<std::size_t>(depth * hw));
    const float* wdata = wv.value().ptr();
    for (Index n = 0; n < g.n; ++n) {
        const float* xn = x.value().ptr() + n * g.cin * hw;
        ConstMap dout(gout.ptr() + n * g.cout * hw, g.cout, hw);
        const Index woff = weight_of(n);
        const float* colsp = xn;
        if (g.ksize == 3 && wv.requires_grad()) {
            cols.resize(static_cast<std::size_t>(depth * hw));
            kernels::im2col3x3(std::span<const float>(xn, static_cast<std::size_t>(g.cin * hw)), g.cin, g.h, g.w,
                               cols);
            colsp = cols.data();
        }
        if (wv.requires_grad()) {
            MutMap dw(grad_of(wv).ptr() + woff, g.cout, depth);
            dw.noalias() += dout * ConstMap(colsp, depth, hw).transpose();
        }
        if (bv.requires_grad()) {
            float* db = grad_of(bv).ptr() + woff / depth;
            for (Index c = 0; c < g.cout; ++c) {
                double s = 0.0;
                for (Index p = 0; p < hw; ++p) s += dout(c, p);
                db[c] += static_cast<float>(s);
            }
        }
        if (x.requires_grad()) {
            float* dx = grad_of(x).ptr() + n * g.cin * hw;
            ConstMap wm(wdata + woff, g.cout, depth);
            if (g.ksize == 1) {
                MutMap(dx, g.cin, hw).noalias() += wm.transpose() * dout;
            } else {
                MutMap(dcols.data(), depth, hw).noalias() = wm.transpose() * dout;
                kernels::col2im3x3(dcols, g.cin, g.h, g.w, std::span<float>(dx, static_cast<std::size_t>(g.cin * hw)));
            }
        }
    }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    Tape& tape = common_tape("matmul", {&a, &b});
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) throw_shape_error("matmul", {a.shape(), b.shape()});
    Array out({m, n});
    out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
    return tape.record("matmul", std::move(out), any_grad({&a, &b}), [a, b, m, k, n](detail::Node& self) {
        auto g = self.grad.matrix(m, n);
        if (a.requires_grad()) grad_of(a).matrix(m, k).noalias() += g * b.value().matrix(k, n).transpose();
        if (b.requires_grad()) grad_of(b).matrix(k, n).noalias() += a.value().matrix(m, k).transpose() * g;
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    Tape& tape = common_tape("linear", {&x, &w, &b});
    require_rank("linear", x, 2);
    require_rank("linear", w, 2);
    const Index n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
    if (w.shape()[1] != in || b.value().size() != out_dim) throw_shape_error("linear", {x.shape(), w.shape(), b.shape()});
    Array out({n, out_dim});
    auto o = out.matrix(n, out_dim);
    o.noalias() = x.value().matrix(n, in) * w.value().matrix(out_dim, in).transpose();
    o.rowwise() += b.value().matrix(1, out_dim).row(0);
    return tape.record("linear", std::move(out), any_grad({&x, &w, &b}), [x, w, b, n, in, out_dim](detail::Node& self) {
        auto g = self.grad.matrix(n, out_dim);
        if (x.requires_grad()) grad_of(x).matrix(n, in).noalias() += g * w.value().matrix(out_dim, in);
        if (w.requires_grad()) grad_of(w).matrix(out_dim, in).noalias() += g.transpose() * x.value().matrix(n, in);
        if (b.requires_grad()) {
            auto& db = grad_of(b);
            for (Index j = 0; j < out_dim; ++j) {
                double s = 0.0;
                for (Index i = 0; i < n; ++i) s += g(i, j);
                db[j] += static_cast<float>(s);
            }
        }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b) {
    Tape& tape = common_tape("conv2d", {&x, &w, &b});
    require_rank("conv2d", x, 4);
    require_rank("conv2d", w, 4);
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const Index ksize = ws[2];
    if ((ksize != 1 && ksize != 3) || ws[3] != ksize || ws[1] != xs[1] || b.value().size() != ws[0]) {
        throw_shape_error("conv2d", {xs, ws, b.shape()});
    }
    const ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ksize};
    Array out({g.n, g.cout, g.h, g.w});
    std::vector<float> scratch;
    for (Index n = 0; n < g.n; ++n) {
        kernels::conv_forward(x.value().slice0(n), g.cin, g.h, g.w, w.value().data(), b.value().data(), g.cout,
                              ksize, out.slice0(n), scratch);
    }
    return tape.record("conv2d", std::move(out), any_grad({&x, &w, &b}), [g, x, w, b](detail::Node& self) {
        conv_backward(g, x, w, b, self.grad, [](Index) { return Index{0}; });
    });
}

Var slot_conv2d(const Var& x, const Var& w, const Var& b, std::span<const Index> slots) {
    Tape& tape = common_tape("slot_conv2d", {&x, &w, &b});
    require_rank("slot_conv2d", x, 4);
    require_rank("slot_conv2d", w, 5);
    require_rank("slot_conv2d", b, 2);
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const Index slot_count = ws[0], ksize = ws[3];
    if ((ksize != 1 && ksize != 3) || ws[4] != ksize || ws[2] != xs[1] || b.shape()[0] != slot_count ||
        b.shape()[1] != ws[1]) {
        throw_shape_error("slot_conv2d", {xs, ws, b.shape()});
    }
    if (static_cast<Index>(slots.size()) != xs[0]) {
        throw_shape_error("slot_conv2d", {xs, Shape{static_cast<Index>(slots.size())}}, "one slot per sample");
    }
    for (Index s : slots) {
        if (s < 0 || s >= slot_count) throw std::out_of_range(fmt::format("slot_conv2d: slot {} outside [0,{})", s, slot_count));
    }
    const ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[1], ksize};
    const Index wstride = w.value().stride0();
    Array out({g.n, g.cout, g.h, g.w});
    std::vector<float> scratch;
    for (Index n = 0; n < g.n; ++n) {
        const Index k = slots[static_cast<std::size_t>(n)];
        kernels::conv_forward(x.value().slice0(n), g.cin, g.h, g.w, w.value().slice0(k), b.value().slice0(k), g.cout,
                              ksize, out.slice0(n), scratch);
    }
    std::vector<Index> slot_copy(slots.begin(), slots.end());
    return tape.record("slot_conv2d", std::move(out), any_grad({&x, &w, &b}),
                       [g, x, w, b, wstride, slot_copy = std::move(slot_copy)](detail::Node& self) {
                           conv_backward(g, x, w, b, self.grad, [&](Index n) {
                               return slot_copy[static_cast<std::size_t>(n)] * wstride;
                           });
                       });
}

Var add(const Var& a, const Var& b) {
    Tape& tape = common_tape("add", {&a, &b});
    const auto& as = a.shape();
    const auto& bs = b.shape();
    const bool same = as == bs;
    const bool suffix = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
    if (!same && !suffix) throw_shape_error("add", {as, bs});
    Array out = a.value();
    const Index inner = b.value().size();
    const Index reps = inner == 0 ? 0 : out.size() / inner;
    for (Index r = 0; r < reps; ++r) {
        Eigen::Map<Vector<float>>(out.ptr() + r * inner, inner) += b.value().vec();
    }
    return tape.record("add", std::move(out), any_grad({&a, &b}), [a, b, inner, reps](detail::Node& self) {
        push_grad(a, self.grad.data());
        if (b.requires_grad()) {
            auto& gb = grad_of(b);
            for (Index i = 0; i < inner; ++i) {
                double s = 0.0;
                for (Index r = 0; r < reps; ++r) s += self.grad[r * inner + i];
                gb[i] += static_cast<float>(s);
            }
        }
    });
}

Var scale(const Var& a, float factor) {
    Tape& tape = common_tape("scale", {&a});
    Array out = a.value();
    out.vec() *= factor;
    return tape.record("scale", std::move(out), a.requires_grad(), [a, factor](detail::Node& self) {
        grad_of(a).vec() += factor * self.grad.vec();
    });
}

Var flatten(const Var& a) {
    Tape& tape = common_tape("flatten", {&a});
    if (a.shape().empty()) throw_shape_error("flatten", {a.shape()}, "rank >= 1 required");
    const Index n = a.shape()[0];
    const Index rest = n == 0 ? 0 : a.value().size() / n;
    return tape.record("flatten", a.value().reshaped({n, rest}), a.requires_grad(), [a](detail::Node& self) {
        grad_of(a).vec() += self.grad.vec();
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    Tape& tape = parts.front().tape();
    const Shape& first = parts.front().shape();
    if (first.size() < 2) throw_shape_error("concat_channels", {first}, "rank >= 2 required");
    Index channels = 0;
    bool grad = false;
    for (const Var& p : parts) {
        common_tape("concat_channels", {&parts.front(), &p});
        const Shape& s = p.shape();
        if (s.size() != first.size() || s[0] != first[0] || !std::equal(s.begin() + 2, s.end(), first.begin() + 2)) {
            throw_shape_error("concat_channels", {first, s});
        }
        channels += s[1];
        grad = grad || p.requires_grad();
    }
    const Index n = first[0];
    const Index inner = element_count(Shape(first.begin() + 2, first.end()));
    Shape out_shape = first;
    out_shape[1] = channels;
    Array out(out_shape);
    std::vector<Var> inputs(parts.begin(), parts.end());
    for (Index i = 0; i < n; ++i) {
        float* dst = out.ptr() + i * channels * inner;
        for (const Var& p : inputs) {
            const Index chunk = p.shape()[1] * inner;
            std::copy_n(p.value().ptr() + i * chunk, chunk, dst);
            dst += chunk;
        }
    }
    return tape.record("concat_channels", std::move(out), grad, [inputs, n, channels, inner](detail::Node& self) {
        for (Index i = 0; i < n; ++i) {
            const float* src = self.grad.ptr() + i * channels * inner;
            for (const Var& p : inputs) {
                const Index chunk = p.shape()[1] * inner;
                if (p.requires_grad()) {
                    float* dst = grad_of(p).ptr() + i * chunk;
                    for (Index j = 0; j < chunk; ++j) dst[j] += src[j];
                }
                src += chunk;
            }
        }
    });
}

Var leaky_relu(const Var& x, float slope) {
    Tape& tape = common_tape("leaky_relu", {&x});
    Array out = x.value();
    for (float& v : out.storage()) v = v > 0.0f ? v : v * slope;
    return tape.record(slope == 0.0f ? "relu" : "leaky_relu", std::move(out), x.requires_grad(),
                       [x, slope](detail::Node& self) {
                           auto& gx = grad_of(x);
                           const auto& xv = x.value();
                           for (Index i = 0; i < xv.size(); ++i) gx[i] += xv[i] > 0.0f ? self.grad[i] : slope * self.grad[i];
                       });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0f); }

Var avgpool2x2(const Var& x) {
    Tape& tape = common_tape("avgpool2x2", {&x});
    require_rank("avgpool2x2", x, 4);
    const auto& s = x.shape();
    if (s[2] % 2 != 0 || s[3] % 2 != 0) throw_shape_error("avgpool2x2", {s}, "spatial extents must be even");
    const Index planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
    Array out({s[0], s[1], oh, ow});
    const float* src = x.value().ptr();
    for (Index p = 0; p < planes; ++p) {
        for (Index y = 0; y < oh; ++y) {
            for (Index xx = 0; xx < ow; ++xx) {
                const float* a = src + p * h * w + 2 * y * w + 2 * xx;
                out[(p * oh + y) * ow + xx] = 0.25f * (a[0] + a[1] + a[w] + a[w + 1]);
            }
        }
    }
    return tape.record("avgpool2x2", std::move(out), x.requires_grad(), [x, planes, h, w, oh, ow](detail::Node& self) {
        float* gx = grad_of(x).ptr();
        for (Index p = 0; p < planes; ++p) {
            for (Index y = 0; y < oh; ++y) {
                for (Index xx = 0; xx < ow; ++xx) {
                    const float g = 0.25f * self.grad[(p * oh + y) * ow + xx];
                    float* a = gx + p * h * w + 2 * y * w + 2 * xx;
                    a[0] += g;
                    a[1] += g;
                    a[w] += g;
                    a[w + 1] += g;
                }
            }
        }
    });
}

Var upsample_nearest2x2(const Var& x) {
    Tape& tape = common_tape("upsample_nearest2x2", {&x});
    require_rank("upsample_nearest2x2", x, 4);
    const auto& s = x.shape();
    const Index planes = s[0] * s[1], h = s[2], w = s[3], oh = 2 * h, ow = 2 * w;
    Array out({s[0], s[1], oh, ow});
    const float* src = x.value().ptr();
    for (Index p = 0; p < planes; ++p) {
        for (Index y = 0; y < oh; ++y) {
            for (Index xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = src[(p * h + y / 2) * w + xx / 2];
        }
    }
    return tape.record("upsample_nearest2x2", std::move(out), x.requires_grad(),
                       [x, planes, h, w, oh, ow](detail::Node& self) {
                           float* gx = grad_of(x).ptr();
                           for (Index p = 0; p < planes; ++p) {
                               for (Index y = 0; y < oh; ++y) {
                                   for (Index xx = 0; xx < ow; ++xx) {
                                       gx[(p * h + y / 2) * w + xx / 2] += self.grad[(p * oh + y) * ow + xx];
                                   }
                               }
                           }
                       });
}

Var mse(const Var& a, const Var& b) {
    Tape& tape = common_tape("mse", {&a, &b});
    if (a.shape() != b.shape()) throw_shape_error("mse", {a.shape(), b.shape()});
    const double value = mean_squared_error(a.value(), b.value());
    return tape.record("mse", Array::scalar(static_cast<float>(value)), any_grad({&a, &b}), [a, b](detail::Node& self) {
        const Index count = a.value().size();
        const float coef = 2.0f * self.grad[0] / static_cast<float>(count);
        const auto& av = a.value();
        const auto& bv = b.value();
        if (a.requires_grad()) {
            auto& ga = grad_of(a);
            for (Index i = 0; i < count; ++i) ga[i] += coef * (av[i] - bv[i]);
        }
        if (b.requires_grad()) {
            auto& gb = grad_of(b);
            for (Index i = 0; i < count; ++i) gb[i] -= coef * (av[i] - bv[i]);
        }
    });
}

Var mean_of(std::span<const Var> scalars) {
    if (scalars.empty()) throw std::invalid_argument("mean_of: no inputs");
    Tape& tape = scalars.front().tape();
    double sum = 0.0;
    bool grad = false;
    for (const Var& s : scalars) {
        common_tape("mean_of", {&scalars.front(), &s});
        if (s.value().size() != 1) throw_shape_error("mean_of", {s.shape()}, "scalar inputs required");
        sum += s.value()[0];
        grad = grad || s.requires_grad();
    }
    const double count = static_cast<double>(scalars.size());
    std::vector<Var> inputs(scalars.begin(), scalars.end());
    return tape.record("mean_of", Array::scalar(static_cast<float>(sum / count)), grad,
                       [inputs, count](detail::Node& self) {
                           const float g = self.grad[0] / static_cast<float>(count);
                           for (const Var& s : inputs) {
                               if (s.requires_grad()) grad_of(s)[0] += g;
                           }
                       });
}

Var gather_rows(const Var& table, std::span<const Index> rows) {
    Tape& tape = common_tape("gather_rows", {&table});
    require_rank("gather_rows", table, 2);
    const Index r = table.shape()[0], e = table.shape()[1];
    Array out({static_cast<Index>(rows.size()), e});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= r) throw std::out_of_range(fmt::format("gather_rows: row {} outside [0,{})", rows[i], r));
        std::copy_n(table.value().ptr() + rows[i] * e, e, out.ptr() + static_cast<Index>(i) * e);
    }
    std::vector<Index> idx(rows.begin(), rows.end());
    return tape.record("gather_rows", std::move(out), table.requires_grad(), [table, idx, e](detail::Node& self) {
        float* g = grad_of(table).ptr();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (Index j = 0; j < e; ++j) g[idx[i] * e + j] += self.grad[static_cast<Index>(i) * e + j];
        }
    });
}

Var broadcast_spatial(const Var& x, Index height, Index width) {
    Tape& tape = common_tape("broadcast_spatial", {&x});
    require_rank("broadcast_spatial", x, 2);
    const Index n = x.shape()[0], c = x.shape()[1], hw = height * width;
    Array out({n, c, height, width});
    for (Index i = 0; i < n * c; ++i) std::fill_n(out.ptr() + i * hw, hw, x.value()[i]);
    return tape.record("broadcast_spatial", std::move(out), x.requires_grad(), [x, n, c, hw](detail::Node& self) {
        auto& g = grad_of(x);
        for (Index i = 0; i < n * c; ++i) {
            double s = 0.0;
            for (Index p = 0; p < hw; ++p) s += self.grad[i * hw + p];
            g[i] += static_cast<float>(s);
        }
    });
}

Var softmax_cross_entropy(const Var& logits, std::span<const Index> labels) {
    Tape& tape = common_tape("softmax_cross_entropy", {&logits});
    require_rank("softmax_cross_entropy", logits, 2);
    const Index n = logits.shape()[0], c = logits.shape()[1];
    if (static_cast<Index>(labels.size()) != n) {
        throw_shape_error("softmax_cross_entropy", {logits.shape(), Shape{static_cast<Index>(labels.size())}});
    }
    Array probs({n, c});
    double loss = 0.0;
    for (Index i = 0; i < n; ++i) {
        const float* row = logits.value().ptr() + i * c;
        const float mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (Index j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
        for (Index j = 0; j < c; ++j) probs[i * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / z);
        const Index y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw std::out_of_range(fmt::format("softmax_cross_entropy: label {} outside [0,{})", y, c));
        loss -= std::log(std::max(1e-30, static_cast<double>(probs[i * c + y])));
    }
    std::vector<Index> ys(labels.begin(), labels.end());
    return tape.record("softmax_cross_entropy", Array::scalar(static_cast<float>(loss / static_cast<double>(n))),
                       logits.requires_grad(), [logits, probs = std::move(probs), ys, n, c](detail::Node& self) {
                           auto& g = grad_of(logits);
                           const float coef = self.grad[0] / static_cast<float>(n);
                           for (Index i = 0; i < n; ++i) {
                               for (Index j = 0; j < c; ++j) {
                                   const float target = j == ys[static_cast<std::size_t>(i)] ? 1.0f : 0.0f;
                                   g[i * c + j] += coef * (probs[i * c + j] - target);
                               }
                           }
                       });
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::matmul: return "matmul";
        case OpKind::conv2d: return "conv2d";
        case OpKind::add: return "add";
        case OpKind::concat_channels: return "concat_channels";
        case OpKind::relu: return "relu";
        case OpKind::leaky_relu: return "leaky_relu";
        case OpKind::avgpool2x2: return "avgpool2x2";
        case OpKind::upsample_nearest2x2: return "upsample_nearest2x2";
        case OpKind::mse: return "mse";
    }
    return "unknown";
}

Var op_forward(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
    auto need = [&](std::size_t count) {
        if (inputs.size() != count) {
            throw std::invalid_argument(
                fmt::format("{}: expected {} inputs, got {}", op_name(kind), count, inputs.size()));
        }
    };
    switch (kind) {
        case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
        case OpKind::conv2d: need(3); return conv2d(inputs[0], inputs[1], inputs[2]);
        case OpKind::add: need(2); return add(inputs[0], inputs[1]);
        case OpKind::concat_channels: return concat_channels(inputs);
        case OpKind::relu: need(1); return relu(inputs[0]);
        case OpKind::leaky_relu: need(1); return leaky_relu(inputs[0], attrs.slope);
        case OpKind::avgpool2x2: need(1); return avgpool2x2(inputs[0]);
        case OpKind::upsample_nearest2x2: need(1); return upsample_nearest2x2(inputs[0]);
        case OpKind::mse: need(2); return mse(inputs[0], inputs[1]);
    }
    throw std::invalid_argument("op_forward: unknown op kind");
}

}  // namespace ddn
