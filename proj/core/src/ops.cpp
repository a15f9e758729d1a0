#include "mcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "mcn/error.hpp"

namespace mcn {

namespace {

using Index = std::ptrdiff_t;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
bool records(std::initializer_list<const Tensor<T>*> inputs) {
    if (!GradMode::is_enabled()) return false;
    for (const Tensor<T>* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, bool record, std::vector<NodePtr<T>> inputs,
                      std::function<void(detail::Node<T>&)> rule, std::string_view op) {
    Tensor<T> out(std::move(shape), std::move(data));
    if (record) {
        auto& node = *out.node();
        node.requires_grad = true;
        node.inputs = std::move(inputs);
        node.backward = std::move(rule);
        node.op = op;
    }
    return out;
}

// Grad buffer of the k-th input, or nullptr if that input takes no gradient.
template <typename T>
T* input_grad(detail::Node<T>& out, std::size_t k) {
    auto& in = out.inputs[k];
    if (!in || !in->requires_grad) return nullptr;
    return in->grad.data();
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                             std::to_string(rank) + ", got shape " + shape_to_string(s));
    }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a) + " vs " +
                             shape_to_string(b));
    }
}

// Half-open range of output columns whose input column ow*s + k - p lies in [0, W).
std::pair<Index, Index> valid_range(Index out_extent, Index in_extent, Index stride, Index k, Index pad) {
    Index lo = 0;
    if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
    Index hi = in_extent - 1 + pad - k;
    hi = hi < 0 ? 0 : hi / stride + 1;
    return {std::min(lo, out_extent), std::min(hi, out_extent)};
}

struct ConvGeometry {
    Index n, cin, h, w, cout, kh, kw, oh, ow, stride, pad;
};

template <typename T>
void conv_forward_kernel(const ConvGeometry& g, const T* in, const T* wt, const T* bias, T* out) {
    const Index plane_in = g.h * g.w;
    const Index plane_out = g.oh * g.ow;
    for (Index n = 0; n < g.n; ++n) {
        for (Index co = 0; co < g.cout; ++co) {
            T* o = out + (n * g.cout + co) * plane_out;
            std::fill(o, o + plane_out, bias ? bias[co] : T{0});
            for (Index ci = 0; ci < g.cin; ++ci) {
                const T* ip = in + (n * g.cin + ci) * plane_in;
                const T* wp = wt + (co * g.cin + ci) * g.kh * g.kw;
                for (Index ky = 0; ky < g.kh; ++ky) {
                    const auto [y_lo, y_hi] = valid_range(g.oh, g.h, g.stride, ky, g.pad);
                    for (Index kx = 0; kx < g.kw; ++kx) {
                        const T wv = wp[ky * g.kw + kx];
                        const auto [x_lo, x_hi] = valid_range(g.ow, g.w, g.stride, kx, g.pad);
                        for (Index oy = y_lo; oy < y_hi; ++oy) {
                            const T* irow = ip + (oy * g.stride + ky - g.pad) * g.w;
                            const Index shift = kx - g.pad;
                            T* orow = o + oy * g.ow;
                            if (g.stride == 1) {
                                for (Index ox = x_lo; ox < x_hi; ++ox) orow[ox] += wv * irow[ox + shift];
                            } else {
                                for (Index ox = x_lo; ox < x_hi; ++ox) orow[ox] += wv * irow[ox * g.stride + shift];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_backward_kernel(const ConvGeometry& g, const T* in, const T* wt, const T* gout, T* gin, T* gw,
                          T* gb) {
    const Index plane_in = g.h * g.w;
    const Index plane_out = g.oh * g.ow;
    for (Index n = 0; n < g.n; ++n) {
        for (Index co = 0; co < g.cout; ++co) {
            const T* go = gout + (n * g.cout + co) * plane_out;
            if (gb) {
                T acc{0};
                for (Index i = 0; i < plane_out; ++i) acc += go[i];
                gb[co] += acc;
            }
            for (Index ci = 0; ci < g.cin; ++ci) {
                const T* ip = in + (n * g.cin + ci) * plane_in;
                T* gip = gin ? gin + (n * g.cin + ci) * plane_in : nullptr;
                const Index wbase = (co * g.cin + ci) * g.kh * g.kw;
                for (Index ky = 0; ky < g.kh; ++ky) {
                    const auto [y_lo, y_hi] = valid_range(g.oh, g.h, g.stride, ky, g.pad);
                    for (Index kx = 0; kx < g.kw; ++kx) {
                        const auto [x_lo, x_hi] = valid_range(g.ow, g.w, g.stride, kx, g.pad);
                        const T wv = wt[wbase + ky * g.kw + kx];
                        T wacc{0};
                        for (Index oy = y_lo; oy < y_hi; ++oy) {
                            const Index row = (oy * g.stride + ky - g.pad) * g.w;
                            const Index shift = kx - g.pad;
                            const T* irow = ip + row;
                            const T* grow = go + oy * g.ow;
                            if (g.stride == 1) {
                                for (Index ox = x_lo; ox < x_hi; ++ox) wacc += grow[ox] * irow[ox + shift];
                                if (gip) {
                                    T* girow = gip + row;
                                    for (Index ox = x_lo; ox < x_hi; ++ox) girow[ox + shift] += wv * grow[ox];
                                }
                            } else {
                                for (Index ox = x_lo; ox < x_hi; ++ox) {
                                    wacc += grow[ox] * irow[ox * g.stride + shift];
                                }
                                if (gip) {
                                    T* girow = gip + row;
                                    for (Index ox = x_lo; ox < x_hi; ++ox) girow[ox * g.stride + shift] += wv * grow[ox];
                                }
                            }
                        }
                        if (gw) gw[wbase + ky * g.kw + kx] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
    require_rank(input.shape(), 4, "conv2d", "input");
    require_rank(weight.shape(), 4, "conv2d", "weight");
    if (stride == 0) throw ParameterError("conv2d: stride must be positive");
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    if (is[1] != ws[1]) {
        throw DimensionError("conv2d: input has " + std::to_string(is[1]) + " channels, weight " +
                             shape_to_string(ws) + " expects " + std::to_string(ws[1]));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != ws[0])) {
        throw DimensionError("conv2d: bias shape " + shape_to_string(bias.shape()) +
                             " does not match " + std::to_string(ws[0]) + " output channels");
    }
    if (is[2] + 2 * padding < ws[2] || is[3] + 2 * padding < ws[3]) {
        throw DimensionError("conv2d: kernel " + shape_to_string(ws) + " larger than padded input " +
                             shape_to_string(is));
    }
    ConvGeometry g{};
    g.n = static_cast<Index>(is[0]);
    g.cin = static_cast<Index>(is[1]);
    g.h = static_cast<Index>(is[2]);
    g.w = static_cast<Index>(is[3]);
    g.cout = static_cast<Index>(ws[0]);
    g.kh = static_cast<Index>(ws[2]);
    g.kw = static_cast<Index>(ws[3]);
    g.stride = static_cast<Index>(stride);
    g.pad = static_cast<Index>(padding);
    g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    std::vector<T> out(static_cast<std::size_t>(g.n * g.cout * g.oh * g.ow));
    conv_forward_kernel(g, input.data().data(), weight.data().data(),
                        bias.defined() ? bias.data().data() : nullptr, out.data());

    const bool rec = records<T>({&input, &weight, &bias});
    std::vector<NodePtr<T>> inputs{input.node(), weight.node()};
    if (bias.defined()) inputs.push_back(bias.node());
    const bool has_bias = bias.defined();
    return make_result<T>(
        {is[0], ws[0], static_cast<std::size_t>(g.oh), static_cast<std::size_t>(g.ow)}, std::move(out), rec,
        std::move(inputs),
        [g, has_bias](detail::Node<T>& o) {
            conv_backward_kernel(g, o.inputs[0]->data.data(), o.inputs[1]->data.data(), o.grad.data(),
                                 input_grad(o, 0), input_grad(o, 1), has_bias ? input_grad(o, 2) : nullptr);
        },
        "conv2d");
}

template <typename T>
Tensor<T> tconv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride) {
    require_rank(input.shape(), 4, "tconv2d", "input");
    require_rank(weight.shape(), 4, "tconv2d", "weight");
    if (stride == 0) throw ParameterError("tconv2d: stride must be positive");
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    if (is[1] != ws[0]) {
        throw DimensionError("tconv2d: input has " + std::to_string(is[1]) + " channels, weight " +
                             shape_to_string(ws) + " expects " + std::to_string(ws[0]));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != ws[1])) {
        throw DimensionError("tconv2d: bias shape " + shape_to_string(bias.shape()) +
                             " does not match " + std::to_string(ws[1]) + " output channels");
    }
    const Index n = static_cast<Index>(is[0]), cin = static_cast<Index>(is[1]);
    const Index h = static_cast<Index>(is[2]), w = static_cast<Index>(is[3]);
    const Index cout = static_cast<Index>(ws[1]), kh = static_cast<Index>(ws[2]), kw = static_cast<Index>(ws[3]);
    const Index s = static_cast<Index>(stride);
    const Index oh = (h - 1) * s + kh, ow = (w - 1) * s + kw;

    std::vector<T> out(static_cast<std::size_t>(n * cout * oh * ow), T{0});
    const T* ip = input.data().data();
    const T* wp = weight.data().data();
    for (Index b = 0; b < n; ++b) {
        for (Index co = 0; co < cout; ++co) {
            T* o = out.data() + (b * cout + co) * oh * ow;
            if (bias.defined()) std::fill(o, o + oh * ow, bias.data()[static_cast<std::size_t>(co)]);
            for (Index ci = 0; ci < cin; ++ci) {
                const T* src = ip + (b * cin + ci) * h * w;
                for (Index ky = 0; ky < kh; ++ky) {
                    for (Index kx = 0; kx < kw; ++kx) {
                        const T wv = wp[((ci * cout + co) * kh + ky) * kw + kx];
                        for (Index y = 0; y < h; ++y) {
                            T* orow = o + (y * s + ky) * ow + kx;
                            const T* srow = src + y * w;
                            for (Index x = 0; x < w; ++x) orow[x * s] += wv * srow[x];
                        }
                    }
                }
            }
        }
    }

    const bool rec = records<T>({&input, &weight, &bias});
    std::vector<NodePtr<T>> inputs{input.node(), weight.node()};
    if (bias.defined()) inputs.push_back(bias.node());
    const bool has_bias = bias.defined();
    return make_result<T>(
        {is[0], ws[1], static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)}, std::move(out), rec,
        std::move(inputs),
        [=](detail::Node<T>& o) {
            const T* src_all = o.inputs[0]->data.data();
            const T* wts = o.inputs[1]->data.data();
            T* gin = input_grad(o, 0);
            T* gw = input_grad(o, 1);
            T* gb = has_bias ? input_grad(o, 2) : nullptr;
            const T* gout = o.grad.data();
            for (Index b = 0; b < n; ++b) {
                for (Index co = 0; co < cout; ++co) {
                    const T* go = gout + (b * cout + co) * oh * ow;
                    if (gb) {
                        T acc{0};
                        for (Index i = 0; i < oh * ow; ++i) acc += go[i];
                        gb[co] += acc;
                    }
                    for (Index ci = 0; ci < cin; ++ci) {
                        const T* src = src_all + (b * cin + ci) * h * w;
                        T* gsrc = gin ? gin + (b * cin + ci) * h * w : nullptr;
                        for (Index ky = 0; ky < kh; ++ky) {
                            for (Index kx = 0; kx < kw; ++kx) {
                                const Index widx = ((ci * cout + co) * kh + ky) * kw + kx;
                                const T wv = wts[widx];
                                T wacc{0};
                                for (Index y = 0; y < h; ++y) {
                                    const T* grow = go + (y * s + ky) * ow + kx;
                                    const T* srow = src + y * w;
                                    for (Index x = 0; x < w; ++x) wacc += grow[x * s] * srow[x];
                                    if (gsrc) {
                                        T* gs = gsrc + y * w;
                                        for (Index x = 0; x < w; ++x) gs[x] += wv * grow[x * s];
                                    }
                                }
                                if (gw) gw[widx] += wacc;
                            }
                        }
                    }
                }
            }
        },
        "tconv2d");
}

template <typename T>
Tensor<T> lrelu(const Tensor<T>& input, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw ParameterError("lrelu: slope must lie in (0, 1)");
    const T a = static_cast<T>(slope);
    auto src = input.data();
    std::vector<T> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] >= T{0} ? src[i] : a * src[i];
    return make_result<T>(
        input.shape(), std::move(out), records<T>({&input}), {input.node()},
        [a](detail::Node<T>& o) {
            T* gin = input_grad(o, 0);
            if (!gin) return;
            const auto& x = o.inputs[0]->data;
            for (std::size_t i = 0; i < x.size(); ++i) gin[i] += x[i] >= T{0} ? o.grad[i] : a * o.grad[i];
        },
        "lrelu");
}

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& input) {
    require_rank(input.shape(), 4, "max_pool2", "input");
    const auto& s = input.shape();
    if (s[2] % 2 != 0 || s[3] % 2 != 0) {
        throw DimensionError("max_pool2: spatial extents must be even, got " + shape_to_string(s));
    }
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
    auto src = input.data();
    std::vector<T> out(planes * oh * ow);
    std::vector<std::uint32_t> argmax(out.size());
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const std::size_t cand[4] = {base + 2 * y * w + 2 * x, base + 2 * y * w + 2 * x + 1,
                                             base + (2 * y + 1) * w + 2 * x, base + (2 * y + 1) * w + 2 * x + 1};
                std::size_t best = cand[0];
                for (int k = 1; k < 4; ++k) {
                    if (src[cand[k]] > src[best]) best = cand[k];
                }
                const std::size_t o = (p * oh + y) * ow + x;
                out[o] = src[best];
                argmax[o] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return make_result<T>(
        {s[0], s[1], oh, ow}, std::move(out), records<T>({&input}), {input.node()},
        [argmax = std::move(argmax)](detail::Node<T>& o) {
            T* gin = input_grad(o, 0);
            if (!gin) return;
            for (std::size_t i = 0; i < argmax.size(); ++i) gin[argmax[i]] += o.grad[i];
        },
        "max_pool2");
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> parts) {
    if (parts.empty()) throw DimensionError("concat_channels: no parts");
    const Shape& first = parts[0].shape();
    require_rank(first, 4, "concat_channels", "part");
    std::size_t channels = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require_rank(s, 4, "concat_channels", "part");
        if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
            throw DimensionError("concat_channels: spatial/batch mismatch " + shape_to_string(first) + " vs " +
                                 shape_to_string(s));
        }
        channels += s[1];
    }
    const std::size_t n = first[0], plane = first[2] * first[3];
    std::vector<T> out(n * channels * plane);
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.dim(1);
        auto src = p.data();
        for (std::size_t b = 0; b < n; ++b) {
            std::copy_n(src.begin() + static_cast<Index>(b * c * plane), c * plane,
                        out.begin() + static_cast<Index>((b * channels + offset) * plane));
        }
        offsets.push_back(offset);
        widths.push_back(c);
        offset += c;
    }

    bool rec = false;
    std::vector<NodePtr<T>> inputs;
    for (const auto& p : parts) {
        rec = rec || records<T>({&p});
        inputs.push_back(p.node());
    }
    return make_result<T>(
        {n, channels, first[2], first[3]}, std::move(out), rec, std::move(inputs),
        [=](detail::Node<T>& o) {
            for (std::size_t k = 0; k < offsets.size(); ++k) {
                T* gin = input_grad(o, k);
                if (!gin) continue;
                for (std::size_t b = 0; b < n; ++b) {
                    const T* g = o.grad.data() + (b * channels + offsets[k]) * plane;
                    T* dst = gin + b * widths[k] * plane;
                    for (std::size_t i = 0; i < widths[k] * plane; ++i) dst[i] += g[i];
                }
            }
        },
        "concat_channels");
}

namespace {

// Flat index pairs (depth-layout, space-layout) for a depth/space shuffle.
// `visit(depth_index, space_index)` is called once per element.
template <typename F>
void for_each_shuffle(std::size_t n, std::size_t c_out, std::size_t h, std::size_t w, std::size_t f, F&& visit) {
    const std::size_t c_in = c_out * f * f;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t c = 0; c < c_out; ++c) {
            for (std::size_t dy = 0; dy < f; ++dy) {
                for (std::size_t dx = 0; dx < f; ++dx) {
                    const std::size_t cd = c * f * f + dy * f + dx;
                    for (std::size_t y = 0; y < h; ++y) {
                        for (std::size_t x = 0; x < w; ++x) {
                            const std::size_t di = ((b * c_in + cd) * h + y) * w + x;
                            const std::size_t si = ((b * c_out + c) * h * f + y * f + dy) * w * f + x * f + dx;
                            visit(di, si);
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> depth_to_space(const Tensor<T>& input, std::size_t factor) {
    require_rank(input.shape(), 4, "depth_to_space", "input");
    if (factor == 0) throw ParameterError("depth_to_space: factor must be positive");
    const auto& s = input.shape();
    if (s[1] % (factor * factor) != 0) {
        throw DimensionError("depth_to_space: " + std::to_string(s[1]) + " channels not divisible by " +
                             std::to_string(factor * factor));
    }
    const std::size_t n = s[0], c = s[1] / (factor * factor), h = s[2], w = s[3];
    auto src = input.data();
    std::vector<T> out(src.size());
    for_each_shuffle(n, c, h, w, factor, [&](std::size_t di, std::size_t si) { out[si] = src[di]; });
    return make_result<T>(
        {n, c, h * factor, w * factor}, std::move(out), records<T>({&input}), {input.node()},
        [=](detail::Node<T>& o) {
            T* gin = input_grad(o, 0);
            if (!gin) return;
            for_each_shuffle(n, c, h, w, factor, [&](std::size_t di, std::size_t si) { gin[di] += o.grad[si]; });
        },
        "depth_to_space");
}

template <typename T>
Tensor<T> space_to_depth(const Tensor<T>& input, std::size_t factor) {
    require_rank(input.shape(), 4, "space_to_depth", "input");
    if (factor == 0) throw ParameterError("space_to_depth: factor must be positive");
    const auto& s = input.shape();
    if (s[2] % factor != 0 || s[3] % factor != 0) {
        throw DimensionError("space_to_depth: spatial extents " + shape_to_string(s) + " not divisible by " +
                             std::to_string(factor));
    }
    const std::size_t n = s[0], c = s[1], h = s[2] / factor, w = s[3] / factor;
    auto src = input.data();
    std::vector<T> out(src.size());
    for_each_shuffle(n, c, h, w, factor, [&](std::size_t di, std::size_t si) { out[di] = src[si]; });
    return make_result<T>(
        {n, c * factor * factor, h, w}, std::move(out), records<T>({&input}), {input.node()},
        [=](detail::Node<T>& o) {
            T* gin = input_grad(o, 0);
            if (!gin) return;
            for_each_shuffle(n, c, h, w, factor, [&](std::size_t di, std::size_t si) { gin[si] += o.grad[di]; });
        },
        "space_to_depth");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    auto x = a.data(), y = b.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_result<T>(
        a.shape(), std::move(out), records<T>({&a, &b}), {a.node(), b.node()},
        [](detail::Node<T>& o) {
            for (std::size_t k = 0; k < 2; ++k) {
                if (T* g = input_grad(o, k)) {
                    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                }
            }
        },
        "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    auto x = a.data(), y = b.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_result<T>(
        a.shape(), std::move(out), records<T>({&a, &b}), {a.node(), b.node()},
        [](detail::Node<T>& o) {
            if (T* g = input_grad(o, 0)) {
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
            }
            if (T* g = input_grad(o, 1)) {
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
            }
        },
        "sub");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor) {
    const T f = static_cast<T>(factor);
    auto x = a.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * x[i];
    return make_result<T>(
        a.shape(), std::move(out), records<T>({&a}), {a.node()},
        [f](detail::Node<T>& o) {
            if (T* g = input_grad(o, 0)) {
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += f * o.grad[i];
            }
        },
        "scale");
}

template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> parts, std::span<const double> weights) {
    if (parts.empty()) throw DimensionError("weighted_sum: no parts");
    if (parts.size() != weights.size()) {
        throw ParameterError("weighted_sum: " + std::to_string(parts.size()) + " parts but " +
                             std::to_string(weights.size()) + " weights");
    }
    const Shape& shape = parts[0].shape();
    std::vector<T> out(shape_numel(shape), T{0});
    std::vector<T> w(weights.size());
    bool rec = false;
    std::vector<NodePtr<T>> inputs;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        require_same_shape(shape, parts[k].shape(), "weighted_sum");
        w[k] = static_cast<T>(weights[k]);
        auto x = parts[k].data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * x[i];
        rec = rec || records<T>({&parts[k]});
        inputs.push_back(parts[k].node());
    }
    return make_result<T>(
        shape, std::move(out), rec, std::move(inputs),
        [w](detail::Node<T>& o) {
            for (std::size_t k = 0; k < w.size(); ++k) {
                if (T* g = input_grad(o, k)) {
                    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += w[k] * o.grad[i];
                }
            }
        },
        "weighted_sum");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    auto x = a.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x[i]);
    return make_result<T>(
        a.shape(), std::move(out), records<T>({&a}), {a.node()},
        [](detail::Node<T>& o) {
            T* g = input_grad(o, 0);
            if (!g) return;
            const auto& x = o.inputs[0]->data;
            for (std::size_t i = 0; i < x.size(); ++i) {
                if (x[i] > T{0}) g[i] += o.grad[i];
                else if (x[i] < T{0}) g[i] -= o.grad[i];
            }
        },
        "abs");
}

// Scalar reductions accumulate in extended precision; finite-difference
// checks of composed losses are otherwise limited by summation roundoff.
namespace {
using Accumulator = long double;
}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    Accumulator acc = 0;
    for (T v : a.data()) acc += v;
    return make_result<T>(
        Shape{}, {static_cast<T>(acc)}, records<T>({&a}), {a.node()},
        [](detail::Node<T>& o) {
            T* g = input_grad(o, 0);
            if (!g) return;
            const std::size_t n = o.inputs[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
        },
        "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const std::size_t n = a.numel();
    if (n == 0) throw DimensionError("mean: empty tensor");
    Accumulator acc = 0;
    for (T v : a.data()) acc += v;
    const T inv = T{1} / static_cast<T>(n);
    return make_result<T>(
        Shape{}, {static_cast<T>(acc / static_cast<Accumulator>(n))}, records<T>({&a}), {a.node()},
        [inv, n](detail::Node<T>& o) {
            T* g = input_grad(o, 0);
            if (!g) return;
            const T d = o.grad[0] * inv;
            for (std::size_t i = 0; i < n; ++i) g[i] += d;
        },
        "mean");
}

template <typename T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "l1_mean");
    const std::size_t n = a.numel();
    if (n == 0) throw DimensionError("l1_mean: empty tensor");
    auto x = a.data(), y = b.data();
    Accumulator acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(x[i] - y[i]);
    const T inv = T{1} / static_cast<T>(n);
    return make_result<T>(
        Shape{}, {static_cast<T>(acc / static_cast<Accumulator>(n))}, records<T>({&a, &b}), {a.node(), b.node()},
        [inv, n](detail::Node<T>& o) {
            T* ga = input_grad(o, 0);
            T* gb = input_grad(o, 1);
            const auto& x = o.inputs[0]->data;
            const auto& y = o.inputs[1]->data;
            const T d = o.grad[0] * inv;
            for (std::size_t i = 0; i < n; ++i) {
                const T diff = x[i] - y[i];
                const T s = diff > T{0} ? d : (diff < T{0} ? -d : T{0});
                if (ga) ga[i] += s;
                if (gb) gb[i] -= s;
            }
        },
        "l1_mean");
}

template <typename T>
Tensor<T> total_variation(const Tensor<T>& input) {
    require_rank(input.shape(), 4, "total_variation", "input");
    const auto& s = input.shape();
    if (s[2] < 2 || s[3] < 2) {
        throw DimensionError("total_variation: needs at least 2x2 spatial extent, got " + shape_to_string(s));
    }
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
    const T inv_x = T{1} / static_cast<T>(planes * h * (w - 1));
    const T inv_y = T{1} / static_cast<T>(planes * (h - 1) * w);
    auto x = input.data();
    Accumulator acc_x = 0, acc_y = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        const T* img = x.data() + p * h * w;
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c + 1 < w; ++c) acc_x += std::abs(img[r * w + c + 1] - img[r * w + c]);
        }
        for (std::size_t r = 0; r + 1 < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) acc_y += std::abs(img[(r + 1) * w + c] - img[r * w + c]);
        }
    }
    return make_result<T>(
        Shape{}, {static_cast<T>(acc_x / static_cast<Accumulator>(planes * h * (w - 1)) +
                                 acc_y / static_cast<Accumulator>(planes * (h - 1) * w))}, records<T>({&input}), {input.node()},
        [=](detail::Node<T>& o) {
            T* g = input_grad(o, 0);
            if (!g) return;
            const auto& v = o.inputs[0]->data;
            const T dx = o.grad[0] * inv_x, dy = o.grad[0] * inv_y;
            auto sgn = [](T d) { return d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0}); };
            for (std::size_t p = 0; p < planes; ++p) {
                const T* img = v.data() + p * h * w;
                T* gi = g + p * h * w;
                for (std::size_t r = 0; r < h; ++r) {
                    for (std::size_t c = 0; c + 1 < w; ++c) {
                        const T sv = sgn(img[r * w + c + 1] - img[r * w + c]) * dx;
                        gi[r * w + c + 1] += sv;
                        gi[r * w + c] -= sv;
                    }
                }
                for (std::size_t r = 0; r + 1 < h; ++r) {
                    for (std::size_t c = 0; c < w; ++c) {
                        const T sv = sgn(img[(r + 1) * w + c] - img[r * w + c]) * dy;
                        gi[(r + 1) * w + c] += sv;
                        gi[r * w + c] -= sv;
                    }
                }
            }
        },
        "total_variation");
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& input, T lo, T hi) {
    auto x = input.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
    return Tensor<T>(input.shape(), std::move(out));
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
    if (items.empty()) throw DimensionError("stack_batch: no items");
    const Shape& s0 = items[0].shape();
    require_rank(s0, 4, "stack_batch", "item");
    std::vector<T> out;
    out.reserve(items.size() * shape_numel(s0));
    for (const auto& t : items) {
        const Shape& s = t.shape();
        if (s.size() != 4 || s[0] != 1 || s[1] != s0[1] || s[2] != s0[2] || s[3] != s0[3] || s0[0] != 1) {
            throw DimensionError("stack_batch: items must share one (1, C, H, W) shape, got " +
                                 shape_to_string(s0) + " and " + shape_to_string(s));
        }
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return Tensor<T>({items.size(), s0[1], s0[2], s0[3]}, std::move(out));
}

template <typename T>
Tensor<T> batch_item(const Tensor<T>& input, std::size_t n) {
    require_rank(input.shape(), 4, "batch_item", "input");
    const auto& s = input.shape();
    if (n >= s[0]) throw DimensionError("batch_item: index out of range");
    const std::size_t len = s[1] * s[2] * s[3];
    auto src = input.data().subspan(n * len, len);
    return Tensor<T>({1, s[1], s[2], s[3]}, std::vector<T>(src.begin(), src.end()));
}

#define MCN_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,         \
                                 std::size_t);                                                              \
    template Tensor<T> tconv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);       \
    template Tensor<T> lrelu<T>(const Tensor<T>&, double);                                                  \
    template Tensor<T> max_pool2<T>(const Tensor<T>&);                                                      \
    template Tensor<T> concat_channels<T>(std::span<const Tensor<T>>);                                      \
    template Tensor<T> depth_to_space<T>(const Tensor<T>&, std::size_t);                                    \
    template Tensor<T> space_to_depth<T>(const Tensor<T>&, std::size_t);                                    \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> scale<T>(const Tensor<T>&, double);                                                  \
    template Tensor<T> weighted_sum<T>(std::span<const Tensor<T>>, std::span<const double>);                \
    template Tensor<T> abs<T>(const Tensor<T>&);                                                            \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                            \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                           \
    template Tensor<T> l1_mean<T>(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> total_variation<T>(const Tensor<T>&);                                                \
    template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                                    \
    template Tensor<T> stack_batch<T>(std::span<const Tensor<T>>);                                          \
    template Tensor<T> batch_item<T>(const Tensor<T>&, std::size_t);

MCN_INSTANTIATE_OPS(float)
MCN_INSTANTIATE_OPS(double)

#undef MCN_INSTANTIATE_OPS

}  // namespace mcn
