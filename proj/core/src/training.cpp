#include "mcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "mcn/augment.hpp"
#include "mcn/autograd.hpp"
#include "mcn/error.hpp"
#include "mcn/ops.hpp"
#include "mcn/rng.hpp"

namespace mcn {

namespace {

std::size_t to_count(long long v, const char* key) {
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
}

// Splits a counter into two float-exact 16-bit halves.
Tensor<float> encode_counter(std::uint64_t v) {
    return Tensor<float>({2}, std::vector<float>{static_cast<float>(v & 0xFFFFu), static_cast<float>(v >> 16)});
}

std::uint64_t decode_counter(const Tensor<float>& t) {
    if (t.numel() != 2) throw FormatError("malformed counter tensor in checkpoint");
    const auto d = t.data();
    return static_cast<std::uint64_t>(d[0]) | (static_cast<std::uint64_t>(d[1]) << 16);
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, hash_name("epoch-order"), epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

TrainConfig TrainConfig::from_config(const ConfigFile& file) {
    TrainConfig c;
    const std::size_t sgns = to_count(file.get_int("model", "sgns", 3), "model.sgns");
    const FusionKind kind = parse_fusion(file.get_string("model", "fusion", "residual"));
    c.width_divisor = to_count(file.get_int("model", "width_divisor", 1), "model.width_divisor");
    const std::string cfa = file.get_string("model", "cfa", "bayer");
    CfaKind cfa_kind;
    if (cfa == "bayer") {
        cfa_kind = CfaKind::Bayer;
    } else if (cfa == "xtrans") {
        cfa_kind = CfaKind::XTrans;
    } else {
        throw ConfigError("model.cfa must be bayer or xtrans, got '" + cfa + "'");
    }
    c.seed = static_cast<std::uint64_t>(file.get_int("train", "seed", 0));
    if (c.width_divisor == 0) throw ConfigError("model.width_divisor must be positive");
    if (sgns == 0) throw ConfigError("model.sgns must be positive");
    c.model = McnConfig::make(sgns, kind, c.width_divisor, cfa_kind, c.seed);
    c.model.back_connection = file.get_bool("model", "back_connection", true);
    if (file.has("model", "alpha_out")) {
        c.model.fusion.alpha_out.assign(sgns, file.get_double("model", "alpha_out", 1.0));
    }
    c.model.fusion.beta_coop = file.get_double("model", "beta_coop", c.model.fusion.beta_coop);
    c.model.fusion.beta_back = file.get_double("model", "beta_back", c.model.fusion.beta_back);

    c.epochs = to_count(file.get_int("train", "epochs", static_cast<long long>(c.epochs)), "train.epochs");
    c.steps = to_count(file.get_int("train", "steps", 0), "train.steps");
    c.lr_initial = file.get_double("train", "lr_initial", c.lr_initial);
    c.lr_late = file.get_double("train", "lr_late", c.lr_late);
    c.lr_switch_epoch =
        to_count(file.get_int("train", "lr_switch_epoch", static_cast<long long>(c.lr_switch_epoch)), "train.lr_switch_epoch");
    c.crop = to_count(file.get_int("train", "crop", static_cast<long long>(c.crop)), "train.crop");
    c.batch = to_count(file.get_int("train", "batch", 1), "train.batch");
    c.augment = file.get_bool("train", "augment", true);
    c.checkpoint_every =
        to_count(file.get_int("train", "checkpoint_every", static_cast<long long>(c.checkpoint_every)), "train.checkpoint_every");
    c.log_every = to_count(file.get_int("train", "log_every", 1), "train.log_every");
    c.loss.lambda_r = file.get_double("loss", "lambda_r", 1.0);
    c.loss.lambda_s = file.get_double("loss", "lambda_s", 1.0);
    return c;
}

std::size_t TrainConfig::packed_crop() const { return crop / model.factor(); }

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    if (epochs == 0) throw ParameterError("epochs must be at least 1");
    if (batch == 0) throw ParameterError("batch must be at least 1");
    if (log_every == 0 || checkpoint_every == 0) throw ParameterError("log_every and checkpoint_every must be positive");
    if (!(lr_initial > 0.0) || !(lr_late > 0.0)) throw ParameterError("learning rates must be positive");
    const std::size_t period = model.cfa == CfaKind::Bayer ? 2 : 6;
    if (crop == 0 || crop % (2 * period) != 0) {
        throw ParameterError("crop " + std::to_string(crop) + " must be a positive multiple of " +
                             std::to_string(2 * period) + " (twice the CFA period)");
    }
    if (packed_crop() % 16 != 0) {
        throw ParameterError("crop " + std::to_string(crop) + " gives a packed size of " + std::to_string(packed_crop()) +
                             ", which must be divisible by 16 for four pooling stages");
    }
}

double learning_rate(std::size_t epoch, const TrainConfig& cfg) {
    return epoch < cfg.lr_switch_epoch ? cfg.lr_initial : cfg.lr_late;
}

template <typename T>
void AdamState<T>::init(std::span<const Tensor<T>> params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
        m.emplace_back(p.numel(), T{0});
        v.emplace_back(p.numel(), T{0});
    }
    t = 0;
}

template <typename T>
void adam_step(std::span<const Tensor<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state,
               double lr) {
    if (params.size() != grads.size()) throw DimensionError("adam_step: one gradient per parameter required");
    if (!(lr > 0.0)) throw ParameterError("adam_step: learning rate must be positive");
    if (state.m.size() != params.size()) state.init(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel()) {
            throw DimensionError("adam_step: gradient/moment size mismatch for parameter " + std::to_string(i));
        }
        for (const T g : grads[i]) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
            }
        }
    }
    state.t += 1;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> p = params[i];
        auto data = p.mutable_data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto g = grads[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double gk = static_cast<double>(g[k]);
            const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
            const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + state.eps);
            data[k] = static_cast<T>(static_cast<double>(data[k]) - update);
        }
    }
}

template <typename T>
void adam_step(std::span<const Tensor<T>> params, AdamState<T>& state, double lr) {
    std::vector<std::vector<T>> zeros(params.size());
    std::vector<std::span<const T>> grads;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].has_grad()) {
            grads.push_back(params[i].grad());
        } else {
            zeros[i].assign(params[i].numel(), T{0});
            grads.emplace_back(zeros[i]);
        }
    }
    adam_step<T>(params, grads, state, lr);
}

TrainSample make_training_sample(const ScenePair& pair) {
    TrainSample s;
    s.id = pair.scene_id;
    s.input = preprocess_frame(pair.raw_short, IlluminationParams::for_training(pair.raw_short.exposure_ratio));
    s.target = pair.ground_truth;
    return s;
}

std::vector<TrainSample> load_training_samples(const DatasetManifest& manifest) {
    std::vector<TrainSample> out;
    for (const auto& e : manifest.entries) {
        const RawFrame frame = load_raw_frame(e.input, e.meta);
        TrainSample s;
        s.id = e.input.stem().stem().string();
        s.input = preprocess_frame(frame, IlluminationParams::for_training(e.ratio));
        Tensor<float> target = load_mcnt(e.target).to_tensor();
        if (target.rank() == 3) target = target.reshaped({1, target.dim(0), target.dim(1), target.dim(2)});
        const std::size_t f = frame.cfa.block();
        if (target.rank() != 4 || target.dim(0) != 1 || target.dim(1) != 3 || target.dim(2) != f * s.input.dim(2) ||
            target.dim(3) != f * s.input.dim(3)) {
            throw DimensionError("target '" + e.target.string() + "' has shape " + shape_to_string(target.shape()) +
                                 ", expected (1, 3, " + std::to_string(frame.height) + ", " + std::to_string(frame.width) + ")");
        }
        s.target = std::move(target);
        out.push_back(std::move(s));
    }
    return out;
}

void write_log_header(std::ostream& out) { out << "epoch,step,loss,recon,smooth,lr\n"; }

void write_log_row(std::ostream& out, const LogRow& row) {
    out << row.epoch << ',' << row.step << ',' << format_double(row.loss) << ',' << format_double(row.recon) << ','
        << format_double(row.smooth) << ',' << format_double(row.lr) << '\n';
}

Checkpoint training_checkpoint(const McnModel<float>& model, const AdamState<float>& adam, std::size_t step) {
    Checkpoint ckpt = model.to_checkpoint();
    const auto named = model.named_parameters();
    if (adam.m.size() == named.size()) {
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto& shape = named[i].second.shape();
            ckpt.set("adam.m." + named[i].first, Tensor<float>(shape, adam.m[i]));
            ckpt.set("adam.v." + named[i].first, Tensor<float>(shape, adam.v[i]));
        }
    }
    ckpt.set("adam.t", encode_counter(adam.t));
    ckpt.set("train.step", encode_counter(step));
    return ckpt;
}

TrainResult train_loop(const TrainConfig& cfg_in, const std::vector<TrainSample>& data, const TrainHooks& hooks,
                       const Checkpoint* resume) {
    TrainConfig cfg = cfg_in;
    cfg.model.seed = cfg.seed;
    cfg.validate();
    if (data.empty()) throw ParameterError("train_loop: dataset is empty");
    const std::size_t factor = cfg.model.factor();
    const std::size_t channels = cfg.model.in_channels();
    for (const auto& s : data) {
        if (s.input.rank() != 4 || s.input.dim(1) != channels) {
            throw DimensionError("sample '" + s.id + "' has input shape " + shape_to_string(s.input.shape()) +
                                 ", model expects " + std::to_string(channels) + " channels");
        }
    }

    McnModel<float> model(cfg.model);
    const auto params = model.parameters();
    AdamState<float> adam;
    adam.init(params);
    std::size_t start = 0;
    if (resume) {
        model.load(*resume);
        const auto named = model.named_parameters();
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto* m = resume->find("adam.m." + named[i].first);
            const auto* v = resume->find("adam.v." + named[i].first);
            if (!m || !v || m->numel() != adam.m[i].size() || v->numel() != adam.v[i].size()) {
                throw FormatError("resume checkpoint lacks optimiser state for '" + named[i].first + "'");
            }
            adam.m[i].assign(m->data().begin(), m->data().end());
            adam.v[i].assign(v->data().begin(), v->data().end());
        }
        if (!resume->contains("adam.t") || !resume->contains("train.step")) {
            throw FormatError("resume checkpoint lacks step counters");
        }
        adam.t = decode_counter(resume->get("adam.t"));
        start = decode_counter(resume->get("train.step"));
    }

    const std::size_t n = data.size();
    const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const std::size_t total = cfg.steps ? cfg.steps : cfg.epochs * steps_per_epoch;
    const std::size_t crop = cfg.packed_crop();

    TrainResult result;
    std::vector<std::size_t> order;
    std::size_t order_epoch = static_cast<std::size_t>(-1);
    for (std::size_t s = start; s < total; ++s) {
        const std::size_t epoch = s / steps_per_epoch;
        const std::size_t pos = s % steps_per_epoch;
        if (epoch != order_epoch) {
            order = epoch_order(cfg.seed, epoch, n);
            order_epoch = epoch;
        }
        std::vector<Tensor<float>> inputs;
        std::vector<Tensor<float>> targets;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const auto& sample = data[order[(pos * cfg.batch + b) % n]];
            Rng rng(derive_seed(cfg.seed, s, b));
            auto pair = augment_pair(sample.input, sample.target, factor, crop, cfg.augment, rng);
            inputs.push_back(std::move(pair.input));
            targets.push_back(std::move(pair.target));
        }
        const Tensor<float> input = stack_batch<float>(inputs);
        const Tensor<float> target = stack_batch<float>(targets);

        for (auto p : params) p.zero_grad();
        const auto outputs = mcn_forward(model, input);
        const auto loss = multi_granulation_loss(outputs, target, cfg.loss);
        const double lr = learning_rate(epoch, cfg);
        const double loss_value = static_cast<double>(loss.total.item());

        auto abort = [&](const std::string& reason) {
            if (hooks.on_abort) hooks.on_abort(training_checkpoint(model, adam, s), reason);
            throw NumericError(reason);
        };
        if (!std::isfinite(loss_value)) abort("non-finite loss at step " + std::to_string(s + 1));
        backward(loss.total);
        try {
            adam_step<float>(params, adam, lr);
        } catch (const NumericError& e) {
            abort(std::string(e.what()) + " at step " + std::to_string(s + 1));
        }

        const std::size_t done = s + 1;
        if (done % cfg.log_every == 0 || done == total) {
            LogRow row{epoch, done, loss_value, static_cast<double>(loss.recon.item()),
                       static_cast<double>(loss.smooth.item()), lr};
            result.log.push_back(row);
            if (hooks.on_log) hooks.on_log(row);
        }
        const bool epoch_end = done % steps_per_epoch == 0;
        if (hooks.on_checkpoint && epoch_end && (epoch + 1) % cfg.checkpoint_every == 0 && done != total) {
            hooks.on_checkpoint(training_checkpoint(model, adam, done), done, false);
        }
    }
    result.steps = total;
    result.checkpoint = training_checkpoint(model, adam, std::max(start, total));
    if (hooks.on_checkpoint) hooks.on_checkpoint(result.checkpoint, total, true);
    return result;
}

const MetricsReport& HeadReports::report(const std::string& head) const {
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (heads[i] == head) return reports[i];
    }
    throw ParameterError("unknown output head '" + head + "'");
}

McnOutputs<float> run_inference(const McnModel<float>& model, const Tensor<float>& packed) {
    NoGradGuard guard;
    const std::size_t h = packed.dim(2);
    const std::size_t w = packed.dim(3);
    const std::size_t f = model.config().factor();
    auto out = mcn_forward(model, pad_to_multiple(packed, 16));
    auto finish = [&](const Tensor<float>& t) {
        return clamp(crop_window(t, 0, 0, f * h, f * w), 0.0f, 1.0f);
    };
    out.plain_output = finish(out.plain_output);
    for (auto& o : out.outputs) o = finish(o);
    out.back_output = finish(out.back_output);
    return out;
}

HeadReports evaluate_heads(const McnModel<float>& model, const std::vector<TrainSample>& data,
                           const std::function<void(const TrainSample&, const McnOutputs<float>&)>& on_outputs) {
    HeadReports r;
    const std::size_t n = model.num_sgns();
    r.heads.push_back("sgn1_plain");
    for (std::size_t i = 2; i <= n; ++i) r.heads.push_back("sgn" + std::to_string(i));
    r.heads.push_back("sgn1_back");
    r.reports.resize(r.heads.size());
    for (const auto& sample : data) {
        const auto out = run_inference(model, sample.input);
        if (on_outputs) on_outputs(sample, out);
        std::vector<const Tensor<float>*> heads{&out.plain_output};
        for (const auto& o : out.outputs) heads.push_back(&o);
        heads.push_back(&out.back_output);
        for (std::size_t k = 0; k < heads.size(); ++k) {
            r.reports[k].add(sample.id, psnr(*heads[k], sample.target), ssim(*heads[k], sample.target));
        }
    }
    return r;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::span<const Tensor<float>>, std::span<const std::span<const float>>, AdamState<float>&,
                               double);
template void adam_step<double>(std::span<const Tensor<double>>, std::span<const std::span<const double>>,
                                AdamState<double>&, double);
template void adam_step<float>(std::span<const Tensor<float>>, AdamState<float>&, double);
template void adam_step<double>(std::span<const Tensor<double>>, AdamState<double>&, double);

}  // namespace mcn
