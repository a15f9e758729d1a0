#include "mcn/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>

#include "mcn/error.hpp"
#include "mcn/ops.hpp"
#include "mcn/rng.hpp"

namespace mcn {

namespace {

// Index of the encoder block whose fused feature is concatenated into
// decoder block `b` (5..8 -> 3..0).
constexpr std::size_t skip_source(std::size_t b) { return 8 - b; }
constexpr bool is_decoder(std::size_t b) { return b >= 5; }

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(seed);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
    Tensor<T> t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
ConvParams<T> make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                        std::uint64_t seed) {
    ConvParams<T> p;
    p.weight = glorot_uniform<T>({cout, cin, k, k}, cin * k * k, cout * k * k,
                                 derive_seed(seed, hash_name(name + ".weight")));
    p.bias = Tensor<T>({cout}, T{0});
    p.bias.set_requires_grad(true);
    return p;
}

template <typename T>
ConvParams<T> make_tconv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                         std::uint64_t seed) {
    ConvParams<T> p;
    p.weight = glorot_uniform<T>({cin, cout, k, k}, cin * k * k, cout * k * k,
                                 derive_seed(seed, hash_name(name + ".weight")));
    p.bias = Tensor<T>({cout}, T{0});
    p.bias.set_requires_grad(true);
    return p;
}

template <typename T>
void append_conv(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& name,
                 const ConvParams<T>& p) {
    out.emplace_back(name + ".weight", p.weight);
    out.emplace_back(name + ".bias", p.bias);
}

template <typename T>
Tensor<T> conv_block(const Sgn<T>& sgn, std::size_t b, const Tensor<T>& input) {
    const double slope = sgn.config().lrelu_slope;
    const auto& c1 = sgn.conv(b, 0);
    const auto& c2 = sgn.conv(b, 1);
    Tensor<T> h = lrelu(conv2d(input, c1.weight, c1.bias, 1, 1), slope);
    return lrelu(conv2d(h, c2.weight, c2.bias, 1, 1), slope);
}

}  // namespace

std::array<std::size_t, kSgnBlocks> scaled_widths(std::size_t divisor) {
    if (divisor == 0) throw ParameterError("width divisor must be positive");
    std::array<std::size_t, kSgnBlocks> w{};
    for (std::size_t i = 0; i < kSgnBlocks; ++i) w[i] = std::max<std::size_t>(1, kReferenceWidths[i] / divisor);
    return w;
}

std::string fusion_name(FusionKind kind) { return kind == FusionKind::Residual ? "residual" : "dense"; }

FusionKind parse_fusion(const std::string& name) {
    if (name == "residual" || name == "rmcn") return FusionKind::Residual;
    if (name == "dense" || name == "dmcn") return FusionKind::Dense;
    throw ParameterError("unknown fusion kind '" + name + "' (expected residual or dense)");
}

FusionSpec FusionSpec::defaults(FusionKind kind, std::size_t num_sgns) {
    FusionSpec f;
    f.kind = kind;
    f.alpha_out.assign(num_sgns, 1.0);
    f.beta_coop = 1.0;
    f.beta_back = kind == FusionKind::Residual ? 1.0 : 0.0;
    return f;
}

McnConfig McnConfig::make(std::size_t num_sgns, FusionKind kind, std::size_t width_divisor, CfaKind cfa,
                          std::uint64_t seed) {
    McnConfig c;
    c.num_sgns = num_sgns;
    c.fusion = FusionSpec::defaults(kind, num_sgns);
    c.cfa = cfa;
    c.widths = scaled_widths(width_divisor);
    c.seed = seed;
    return c;
}

void McnConfig::validate() const {
    if (num_sgns == 0) throw ParameterError("MCN needs at least one SGN");
    if (fusion.alpha_out.size() != num_sgns) {
        throw ParameterError("fusion alpha_out must hold one weight per SGN (" + std::to_string(num_sgns) + ")");
    }
    for (auto w : widths) {
        if (w == 0) throw ParameterError("block widths must be positive");
    }
    if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0)) throw ParameterError("LReLU slope must lie in (0, 1)");
}

template <typename T>
Sgn<T>::Sgn(SgnConfig config, std::string prefix, std::uint64_t seed)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
    const auto& w = config_.block_widths;
    const std::size_t k = config_.feature_parts;
    if (k == 0 || config_.input_parts == 0) throw ParameterError("SGN part counts must be positive");
    for (std::size_t b = 0; b < kSgnBlocks; ++b) {
        const std::string base = prefix_ + ".block" + std::to_string(b + 1);
        std::size_t cin = 0;
        if (b == 0) {
            cin = config_.in_channels * config_.input_parts;
        } else if (!is_decoder(b)) {
            cin = k * w[b - 1];
        } else {
            blocks_[b].up = make_tconv<T>(base + ".up", k * w[b - 1], w[b], 2, seed);
            cin = w[b] + k * w[skip_source(b)];
        }
        blocks_[b].convs[0] = make_conv<T>(base + ".conv1", cin, w[b], 3, seed);
        blocks_[b].convs[1] = make_conv<T>(base + ".conv2", w[b], w[b], 3, seed);
    }
    const std::size_t f = config_.upsample_factor;
    head_ = make_conv<T>(prefix_ + ".head", k * w[8], config_.out_channels * f * f, 1, seed);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Sgn<T>::named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t b = 0; b < kSgnBlocks; ++b) {
        const std::string base = prefix_ + ".block" + std::to_string(b + 1);
        if (is_decoder(b)) append_conv(out, base + ".up", blocks_[b].up);
        append_conv(out, base + ".conv1", blocks_[b].convs[0]);
        append_conv(out, base + ".conv2", blocks_[b].convs[1]);
    }
    append_conv(out, prefix_ + ".head", head_);
    return out;
}

template <typename T>
Tensor<T>* Sgn<T>::find_parameter(const std::string& name) {
    auto pick = [&](ConvParams<T>& p, const std::string& base) -> Tensor<T>* {
        if (name == base + ".weight") return &p.weight;
        if (name == base + ".bias") return &p.bias;
        return nullptr;
    };
    for (std::size_t b = 0; b < kSgnBlocks; ++b) {
        const std::string base = prefix_ + ".block" + std::to_string(b + 1);
        if (auto* t = pick(blocks_[b].convs[0], base + ".conv1")) return t;
        if (auto* t = pick(blocks_[b].convs[1], base + ".conv2")) return t;
        if (is_decoder(b)) {
            if (auto* t = pick(blocks_[b].up, base + ".up")) return t;
        }
    }
    return pick(head_, prefix_ + ".head");
}

template <typename T>
void replace_checked(Tensor<T>* slot, const std::string& name, Tensor<T> value) {
    if (!slot) throw ParameterError("unknown parameter '" + name + "'");
    if (slot->shape() != value.shape()) {
        throw DimensionError("parameter '" + name + "' has shape " + shape_to_string(slot->shape()) + ", got " +
                             shape_to_string(value.shape()));
    }
    *slot = std::move(value);
}

template <typename T>
void Sgn<T>::set_parameter(const std::string& name, Tensor<T> value) {
    replace_checked(find_parameter(name), name, std::move(value));
}

template <typename T>
Tensor<T> fuse(const std::vector<Tensor<T>>& parts, const std::vector<double>& weights, FusionKind kind) {
    if (parts.empty()) throw DimensionError("fuse: no parts");
    if (parts.size() != weights.size()) throw ParameterError("fuse: one weight per part required");
    if (kind == FusionKind::Residual) {
        if (parts.size() == 1 && weights[0] == 1.0) return parts[0];
        return weighted_sum<T>(parts, weights);
    }
    std::vector<Tensor<T>> scaled;
    scaled.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
        scaled.push_back(weights[i] == 1.0 ? parts[i] : scale(parts[i], weights[i]));
    }
    return concat_channels<T>(scaled);
}

template <typename T>
SgnResult<T> sgn_forward(const Sgn<T>& sgn, const Tensor<T>& input, const FeatureInjection<T>* injected,
                         FusionKind kind) {
    const auto& cfg = sgn.config();
    const auto& is = input.shape();
    if (is.size() != 4 || is[1] != cfg.in_channels * cfg.input_parts) {
        throw DimensionError("sgn_forward: " + sgn.prefix() + " expects " +
                             std::to_string(cfg.in_channels * cfg.input_parts) + " input channels, got shape " +
                             shape_to_string(is));
    }
    if (is[2] % 16 != 0 || is[3] % 16 != 0) {
        throw DimensionError("sgn_forward: spatial extent " + shape_to_string(is) +
                             " must be divisible by 16 (four 2x pooling stages)");
    }
    if (injected && injected->layers.size() != kSgnBlocks) {
        throw DimensionError("sgn_forward: injection must provide " + std::to_string(kSgnBlocks) + " layers");
    }

    auto fuse_block = [&](std::size_t b, const Tensor<T>& own) -> Tensor<T> {
        const std::vector<Tensor<T>> none;
        const auto& extra = injected ? injected->layers[b] : none;
        const double w = injected ? injected->weight : 1.0;
        for (const auto& e : extra) {
            const bool ok = kind == FusionKind::Residual
                                ? e.shape() == own.shape()
                                : (e.rank() == 4 && e.dim(0) == own.dim(0) && e.dim(2) == own.dim(2) &&
                                   e.dim(3) == own.dim(3));
            if (!ok) {
                throw DimensionError("sgn_forward: injected feature " + shape_to_string(e.shape()) +
                                     " misaligned with block " + std::to_string(b + 1) + " output " +
                                     shape_to_string(own.shape()));
            }
        }
        std::vector<Tensor<T>> parts;
        std::vector<double> weights;
        if (kind == FusionKind::Residual) {
            if (extra.empty()) return own;
            parts.push_back(own);
            weights.push_back(1.0);
            for (const auto& e : extra) {
                parts.push_back(e);
                weights.push_back(w);
            }
            return fuse(parts, weights, kind);
        }
        if (extra.size() + 1 > cfg.feature_parts) {
            throw DimensionError("sgn_forward: " + std::to_string(extra.size()) + " injected parts exceed " +
                                 sgn.prefix() + " capacity of " + std::to_string(cfg.feature_parts - 1));
        }
        const bool own_first = injected ? injected->own_first : true;
        if (own_first) {
            parts.push_back(own);
            weights.push_back(1.0);
        }
        for (const auto& e : extra) {
            parts.push_back(e);
            weights.push_back(w);
        }
        for (std::size_t z = extra.size() + 1; z < cfg.feature_parts; ++z) {
            parts.push_back(Tensor<T>(own.shape(), T{0}));
            weights.push_back(1.0);
        }
        if (!own_first) {
            parts.push_back(own);
            weights.push_back(1.0);
        }
        return fuse(parts, weights, kind);
    };

    SgnResult<T> result;
    result.features.reserve(kSgnBlocks);
    std::array<Tensor<T>, kSgnBlocks> fused;
    Tensor<T> x = input;
    for (std::size_t b = 0; b < kSgnBlocks; ++b) {
        if (b > 0 && !is_decoder(b)) {
            x = max_pool2(fused[b - 1]);
        } else if (is_decoder(b)) {
            const auto& up = sgn.up(b);
            const Tensor<T> parts[2] = {tconv2d(fused[b - 1], up.weight, up.bias, 2), fused[skip_source(b)]};
            x = concat_channels<T>(parts);
        }
        Tensor<T> h = conv_block(sgn, b, x);
        fused[b] = fuse_block(b, h);
        result.features.push_back(std::move(h));
    }
    const auto& head = sgn.head();
    result.output = depth_to_space(conv2d(fused[8], head.weight, head.bias, 1, 0), cfg.upsample_factor);
    return result;
}

template <typename T>
Tensor<T> adapt_output(const ConvParams<T>& adapter, const Tensor<T>& out3, std::size_t factor) {
    const auto& s = out3.shape();
    if (s.size() != 4 || s[1] * factor * factor != adapter.weight.dim(1)) {
        throw DimensionError("adapt_output: expected " + std::to_string(adapter.weight.dim(1) / (factor * factor)) +
                             "-channel image, got shape " + shape_to_string(s));
    }
    return conv2d(space_to_depth(out3, factor), adapter.weight, adapter.bias, 1, 0);
}

template <typename T>
McnModel<T>::McnModel(McnConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t n = config_.num_sgns;
    const bool dense = config_.fusion.kind == FusionKind::Dense;
    const std::size_t f = config_.factor();
    for (std::size_t i = 0; i < n; ++i) {
        SgnConfig sc;
        sc.in_channels = config_.in_channels();
        sc.block_widths = config_.widths;
        sc.upsample_factor = f;
        sc.lrelu_slope = config_.lrelu_slope;
        if (dense) {
            // SGN-1 is shared by the plain pass and the back pass, which reads
            // every adapted output plus the raw input and all N feature sets.
            sc.input_parts = i == 0 ? n + 1 : i + 1;
            sc.feature_parts = i == 0 ? n : i + 1;
        }
        sgns_.emplace_back(sc, "sgn" + std::to_string(i + 1), config_.seed);
        adapters_.push_back(make_conv<T>("adapter" + std::to_string(i + 1), 3 * f * f, config_.in_channels(), 1,
                                         config_.seed));
    }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> McnModel<T>::named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& s : sgns_) {
        auto p = s.named_parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    for (std::size_t i = 0; i < adapters_.size(); ++i) append_conv(out, "adapter" + std::to_string(i + 1), adapters_[i]);
    return out;
}

template <typename T>
std::vector<Tensor<T>> McnModel<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

template <typename T>
void McnModel<T>::set_parameter(const std::string& name, Tensor<T> value) {
    for (auto& s : sgns_) {
        if (name.rfind(s.prefix() + ".", 0) == 0) return s.set_parameter(name, std::move(value));
    }
    for (std::size_t i = 0; i < adapters_.size(); ++i) {
        const std::string base = "adapter" + std::to_string(i + 1);
        if (name == base + ".weight") return replace_checked(&adapters_[i].weight, name, std::move(value));
        if (name == base + ".bias") return replace_checked(&adapters_[i].bias, name, std::move(value));
    }
    throw ParameterError("unknown parameter '" + name + "'");
}

template <typename T>
Checkpoint McnModel<T>::to_checkpoint() const {
    Checkpoint ckpt;
    for (const auto& [name, t] : named_parameters()) ckpt.set(name, t.template cast<float>());
    return ckpt;
}

template <typename T>
void McnModel<T>::load(const Checkpoint& ckpt) {
    for (auto& [name, param] : named_parameters()) {
        const auto* src = ckpt.find(name);
        if (!src) throw FormatError("checkpoint is missing parameter '" + name + "'");
        if (src->shape() != param.shape()) {
            throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_to_string(src->shape()) +
                              ", model expects " + shape_to_string(param.shape()));
        }
        auto dst = param.mutable_data();
        auto values = src->data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
    }
}

template <typename T>
McnOutputs<T> mcn_forward(const McnModel<T>& model, const Tensor<T>& input) {
    const auto& cfg = model.config();
    const auto& fusion = cfg.fusion;
    const FusionKind kind = fusion.kind;
    const bool dense = kind == FusionKind::Dense;
    const std::size_t n = model.num_sgns();
    const std::size_t f = cfg.factor();
    if (input.rank() != 4 || input.dim(1) != cfg.in_channels()) {
        throw DimensionError("mcn_forward: expected (N, " + std::to_string(cfg.in_channels()) +
                             ", h, w) input, got " + shape_to_string(input.shape()));
    }

    McnOutputs<T> out;
    std::vector<Tensor<T>> adapted;
    const Tensor<T> zero_input(input.shape(), T{0});

    // Input fusion: weighted adapted outputs first, raw input last.
    auto fused_input = [&](std::size_t available, std::size_t slots) {
        std::vector<Tensor<T>> parts;
        std::vector<double> weights;
        for (std::size_t i = 0; i < available; ++i) {
            parts.push_back(adapted[i]);
            weights.push_back(fusion.alpha_out[i]);
        }
        if (dense) {
            for (std::size_t z = available; z < slots; ++z) {
                parts.push_back(zero_input);
                weights.push_back(1.0);
            }
        }
        parts.push_back(input);
        weights.push_back(1.0);
        return fuse(parts, weights, kind);
    };

    // SGN-1 plain pass.
    auto first = sgn_forward<T>(model.sgn(0), fused_input(0, n), nullptr, kind);
    out.plain_output = first.output;
    adapted.push_back(adapt_output(model.adapter(0), first.output, f));
    out.features.push_back(std::move(first.features));

    // Cooperative connection: SGN-i reads features of SGN-1..i-1.
    for (std::size_t i = 1; i < n; ++i) {
        FeatureInjection<T> inj;
        inj.layers.resize(kSgnBlocks);
        inj.weight = fusion.beta_coop;
        inj.own_first = false;
        for (std::size_t b = 0; b < kSgnBlocks; ++b) {
            for (std::size_t p = 0; p < i; ++p) inj.layers[b].push_back(out.features[p][b]);
        }
        auto r = sgn_forward<T>(model.sgn(i), fused_input(i, i), &inj, kind);
        adapted.push_back(adapt_output(model.adapter(i), r.output, f));
        out.outputs.push_back(r.output);
        out.features.push_back(std::move(r.features));
    }

    if (!cfg.back_connection) {
        out.back_output = out.plain_output;
        return out;
    }

    // Back connection: SGN-1 again, same parameters, reading all adapted
    // outputs and the features of SGN-2..N.
    FeatureInjection<T> back;
    back.layers.resize(kSgnBlocks);
    back.weight = fusion.beta_back;
    back.own_first = true;
    for (std::size_t b = 0; b < kSgnBlocks; ++b) {
        for (std::size_t p = 1; p < n; ++p) back.layers[b].push_back(out.features[p][b]);
    }
    auto r = sgn_forward<T>(model.sgn(0), fused_input(n, n), &back, kind);
    out.back_output = r.output;
    out.features.push_back(std::move(r.features));
    return out;
}

template <typename T>
std::size_t count_params(const Sgn<T>& sgn) {
    std::size_t total = 0;
    for (const auto& [name, t] : sgn.named_parameters()) total += t.numel();
    return total;
}

template <typename T>
std::size_t count_params(const McnModel<T>& model) {
    std::size_t total = 0;
    for (const auto& [name, t] : model.named_parameters()) total += t.numel();
    return total;
}

McnConfig config_from_checkpoint(const Checkpoint& ckpt) {
    std::size_t n = 0;
    while (ckpt.contains("sgn" + std::to_string(n + 1) + ".head.weight")) ++n;
    if (n == 0 || !ckpt.contains("adapter1.weight")) {
        throw FormatError("checkpoint does not describe an MCN (no sgn1.head / adapter1 tensors)");
    }
    const auto& adapter = ckpt.get("adapter1.weight");
    const std::size_t in_ch = adapter.dim(0);
    McnConfig cfg;
    cfg.num_sgns = n;
    if (in_ch == 4 && adapter.dim(1) == 12) {
        cfg.cfa = CfaKind::Bayer;
    } else if (in_ch == 9 && adapter.dim(1) == 27) {
        cfg.cfa = CfaKind::XTrans;
    } else {
        throw FormatError("checkpoint adapter shape " + shape_to_string(adapter.shape()) + " is not Bayer or X-Trans");
    }
    for (std::size_t b = 0; b < kSgnBlocks; ++b) {
        cfg.widths[b] = ckpt.get("sgn1.block" + std::to_string(b + 1) + ".conv2.weight").dim(0);
    }
    const std::size_t first_in = ckpt.get("sgn1.block1.conv1.weight").dim(1);
    const FusionKind kind = first_in == in_ch ? FusionKind::Residual : FusionKind::Dense;
    cfg.fusion = FusionSpec::defaults(kind, n);
    return cfg;
}

#define MCN_INSTANTIATE_NETWORK(T)                                                                          \
    template class Sgn<T>;                                                                                  \
    template class McnModel<T>;                                                                             \
    template Tensor<T> fuse<T>(const std::vector<Tensor<T>>&, const std::vector<double>&, FusionKind);      \
    template SgnResult<T> sgn_forward<T>(const Sgn<T>&, const Tensor<T>&, const FeatureInjection<T>*,       \
                                         FusionKind);                                                       \
    template Tensor<T> adapt_output<T>(const ConvParams<T>&, const Tensor<T>&, std::size_t);                \
    template McnOutputs<T> mcn_forward<T>(const McnModel<T>&, const Tensor<T>&);                            \
    template std::size_t count_params<T>(const McnModel<T>&);                                               \
    template std::size_t count_params<T>(const Sgn<T>&);

MCN_INSTANTIATE_NETWORK(float)
MCN_INSTANTIATE_NETWORK(double)

#undef MCN_INSTANTIATE_NETWORK

}  // namespace mcn
