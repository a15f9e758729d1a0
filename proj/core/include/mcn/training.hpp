#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcn/config_file.hpp"
#include "mcn/losses.hpp"
#include "mcn/metrics.hpp"
#include "mcn/network.hpp"
#include "mcn/synth.hpp"
#include "mcn/tensor_io.hpp"

namespace mcn {

struct TrainConfig {
    std::size_t epochs = 4000;
    // Total optimisation steps; 0 means epochs x steps_per_epoch. Lets a
    // desk-scale run stop after a fixed step budget.
    std::size_t steps = 0;
    double lr_initial = 1e-4;
    double lr_late = 1e-5;
    std::size_t lr_switch_epoch = 2000;
    std::size_t crop = 512;  // raw pixels; the packed crop is crop / block
    std::uint64_t seed = 0;
    std::size_t batch = 1;
    bool augment = true;
    std::size_t checkpoint_every = 100;  // epochs; a final checkpoint is always written
    std::size_t log_every = 1;           // steps
    LossWeights loss;
    McnConfig model = McnConfig::make(3, FusionKind::Residual);
    std::size_t width_divisor = 1;

    /// Reads [model], [train] and [loss] sections; missing keys keep defaults.
    static TrainConfig from_config(const ConfigFile& file);
    /// Throws ParameterError on an invalid combination.
    void validate() const;
    std::size_t packed_crop() const;
};

/// lr_initial before lr_switch_epoch, lr_late from it on.
double learning_rate(std::size_t epoch, const TrainConfig& cfg);

template <typename T>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t t = 0;

    void init(std::span<const Tensor<T>> params);
};

/// Bias-corrected Adam update in place. `grads[i]` pairs with `params[i]`.
/// Throws NumericError (naming the parameter index) on a non-finite gradient
/// before anything is modified.
template <typename T>
void adam_step(std::span<const Tensor<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state,
               double lr);

/// Same, reading each parameter's gradient buffer (missing = zero).
template <typename T>
void adam_step(std::span<const Tensor<T>> params, AdamState<T>& state, double lr);

struct TrainSample {
    std::string id;
    Tensor<float> input;   // (1, C, h, w), amplified and packed
    Tensor<float> target;  // (1, 3, f h, f w)
};

/// Loads every manifest entry; inputs are amplified with beta = 1.
std::vector<TrainSample> load_training_samples(const DatasetManifest& manifest);
TrainSample make_training_sample(const ScenePair& pair);

struct LogRow {
    std::size_t epoch = 0;
    std::size_t step = 0;  // 1-based count of completed steps
    double loss = 0.0;
    double recon = 0.0;
    double smooth = 0.0;
    double lr = 0.0;
};

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const LogRow& row);

struct TrainHooks {
    std::function<void(const LogRow&)> on_log;
    std::function<void(const Checkpoint&, std::size_t step, bool final)> on_checkpoint;
    // Called with the state before the failing update, then NumericError is thrown.
    std::function<void(const Checkpoint&, const std::string& reason)> on_abort;
};

struct TrainResult {
    Checkpoint checkpoint;  // model parameters plus optimiser state
    std::vector<LogRow> log;
    std::size_t steps = 0;
};

/// Checkpoint holding model parameters, Adam moments and the step counter.
Checkpoint training_checkpoint(const McnModel<float>& model, const AdamState<float>& adam, std::size_t step);

/// Runs forward / loss / backward / Adam for the configured number of steps.
/// Every random draw derives from (seed, epoch) or (seed, step), so resuming
/// from a training checkpoint reproduces an uninterrupted run.
TrainResult train_loop(const TrainConfig& cfg, const std::vector<TrainSample>& data, const TrainHooks& hooks = {},
                       const Checkpoint* resume = nullptr);

// Per-head evaluation: "sgn1_plain", "sgn2" .. "sgnN", "sgn1_back".
struct HeadReports {
    std::vector<std::string> heads;
    std::vector<MetricsReport> reports;

    const MetricsReport& report(const std::string& head) const;
};

/// Runs every sample through the model without gradients (inputs padded to
/// the U-Net granularity, outputs cropped back and clamped to [0, 1]) and
/// scores each output head against the target. `on_outputs` sees the raw
/// forward results for feature export.
HeadReports evaluate_heads(const McnModel<float>& model, const std::vector<TrainSample>& data,
                           const std::function<void(const TrainSample&, const McnOutputs<float>&)>& on_outputs = {});

/// Forward pass on one packed input of any size, output clamped to [0, 1].
McnOutputs<float> run_inference(const McnModel<float>& model, const Tensor<float>& packed);

}  // namespace mcn
