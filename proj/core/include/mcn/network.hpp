#pragma once

// Single-granulation networks (SGNs) and their cooperative composition.
//
// An SGN is a nine-block U-Net: four encoder blocks, a bottleneck and four
// decoder blocks, each holding two 3x3 convolutions with leaky ReLU. Encoder
// outputs are max-pooled; decoder blocks upsample with a 2x2 transposed
// convolution and concatenate the mirrored encoder feature. A 1x1 head emits
// 3 * f^2 channels that depth_to_space turns into a full-resolution RGB image.
//
// Cooperation happens at the nine block outputs. Every block output h_j is
// fused with same-index features of other SGNs before anything consumes it
// (next block, skip connection, head). With residual fusion the parts are
// summed; with dense fusion they are concatenated, which widens the layers
// that read fused features.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcn/raw_pipeline.hpp"
#include "mcn/tensor.hpp"
#include "mcn/tensor_io.hpp"

namespace mcn {

inline constexpr std::size_t kSgnBlocks = 9;
inline constexpr std::array<std::size_t, kSgnBlocks> kReferenceWidths{32, 64, 128, 256, 512, 256, 128, 64, 32};

/// Reference widths divided by `divisor` (at least one channel each).
std::array<std::size_t, kSgnBlocks> scaled_widths(std::size_t divisor);

enum class FusionKind { Residual, Dense };

std::string fusion_name(FusionKind kind);
FusionKind parse_fusion(const std::string& name);

struct FusionSpec {
    FusionKind kind = FusionKind::Residual;
    std::vector<double> alpha_out;  // weight of each SGN's adapted output
    double beta_coop = 1.0;         // weight of injected features, forward cooperation
    double beta_back = 1.0;         // weight of injected features, back connection

    /// Residual: all weights 1. Dense: alpha 1, beta_coop 1, beta_back 0.
    static FusionSpec defaults(FusionKind kind, std::size_t num_sgns);
};

struct SgnConfig {
    std::size_t in_channels = 4;
    std::array<std::size_t, kSgnBlocks> block_widths = kReferenceWidths;
    std::size_t upsample_factor = 2;
    std::size_t out_channels = 3;
    // Dense fusion: number of parts concatenated at the input and at every
    // block output. Both are 1 for residual fusion.
    std::size_t input_parts = 1;
    std::size_t feature_parts = 1;
    double lrelu_slope = 0.2;
};

template <typename T>
struct ConvParams {
    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
class Sgn {
public:
    /// Parameters are initialised uniformly in +-sqrt(6 / (fan_in + fan_out))
    /// from a stream derived from (seed, parameter name); biases start at 0.
    Sgn(SgnConfig config, std::string prefix, std::uint64_t seed);

    const SgnConfig& config() const { return config_; }
    const std::string& prefix() const { return prefix_; }

    const ConvParams<T>& conv(std::size_t block, std::size_t k) const { return blocks_[block].convs[k]; }
    const ConvParams<T>& up(std::size_t block) const { return blocks_[block].up; }
    const ConvParams<T>& head() const { return head_; }

    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;

    /// Swaps in another tensor for a named parameter (same shape). Lets a
    /// gradient check treat one weight tensor as the graph input.
    void set_parameter(const std::string& name, Tensor<T> value);

private:
    Tensor<T>* find_parameter(const std::string& name);

    struct Block {
        std::array<ConvParams<T>, 2> convs;
        ConvParams<T> up;  // decoder blocks only
    };

    SgnConfig config_;
    std::string prefix_;
    std::array<Block, kSgnBlocks> blocks_;
    ConvParams<T> head_;
};

/// Residual: sum_i w_i x_i (shapes equal). Dense: channel concat of w_i x_i
/// (batch and spatial extents equal).
template <typename T>
Tensor<T> fuse(const std::vector<Tensor<T>>& parts, const std::vector<double>& weights, FusionKind kind);

/// Features of other SGNs injected at the nine block outputs.
template <typename T>
struct FeatureInjection {
    std::vector<std::vector<Tensor<T>>> layers;  // [block][part]
    double weight = 1.0;
    bool own_first = false;  // fusion order: own feature before or after injected parts
};

template <typename T>
struct SgnResult {
    std::vector<Tensor<T>> features;  // own block outputs h_1 .. h_9 (before fusion)
    Tensor<T> output;                 // (N, 3, f h, f w)
};

/// Runs one SGN on an already fused input. Without injection, dense SGNs see
/// zero tensors in the concatenation slots.
template <typename T>
SgnResult<T> sgn_forward(const Sgn<T>& sgn, const Tensor<T>& input, const FeatureInjection<T>* injected,
                         FusionKind kind);

/// Raw-output adapter: space_to_depth by f, then a 1x1 convolution back to
/// the SGN input channel count.
template <typename T>
Tensor<T> adapt_output(const ConvParams<T>& adapter, const Tensor<T>& out3, std::size_t factor);

struct McnConfig {
    std::size_t num_sgns = 3;
    FusionSpec fusion = FusionSpec::defaults(FusionKind::Residual, 3);
    CfaKind cfa = CfaKind::Bayer;
    std::array<std::size_t, kSgnBlocks> widths = kReferenceWidths;
    bool back_connection = true;
    double lrelu_slope = 0.2;
    std::uint64_t seed = 0;

    std::size_t in_channels() const { return cfa == CfaKind::Bayer ? 4 : 9; }
    std::size_t factor() const { return cfa == CfaKind::Bayer ? 2 : 3; }

    /// Convenience: `num_sgns` SGNs with default fusion weights for `kind`.
    static McnConfig make(std::size_t num_sgns, FusionKind kind, std::size_t width_divisor = 1,
                          CfaKind cfa = CfaKind::Bayer, std::uint64_t seed = 0);
    void validate() const;
};

template <typename T>
struct McnOutputs {
    Tensor<T> plain_output;          // SGN-1 before back connection
    std::vector<Tensor<T>> outputs;  // SGN-2 .. SGN-N
    Tensor<T> back_output;           // SGN-1 after back connection (plain output when disabled)
    // Block features per pass: [0] SGN-1 plain, [1..N-1] SGN-2..N, [N] SGN-1 back pass.
    std::vector<std::vector<Tensor<T>>> features;
};

template <typename T>
class McnModel {
public:
    explicit McnModel(McnConfig config);

    const McnConfig& config() const { return config_; }
    std::size_t num_sgns() const { return sgns_.size(); }
    const Sgn<T>& sgn(std::size_t i) const { return sgns_[i]; }
    const ConvParams<T>& adapter(std::size_t i) const { return adapters_[i]; }

    /// Parameter tensors in a fixed order; SGN-1 appears once.
    std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
    std::vector<Tensor<T>> parameters() const;
    void set_parameter(const std::string& name, Tensor<T> value);

    Checkpoint to_checkpoint() const;
    /// Copies values from `ckpt`; every parameter must be present with a
    /// matching shape.
    void load(const Checkpoint& ckpt);

private:
    McnConfig config_;
    std::vector<Sgn<T>> sgns_;
    std::vector<ConvParams<T>> adapters_;
};

/// Full cooperative pass: SGN-1 plain pass, SGN-2..N with input fusion of
/// adapted earlier outputs and per-block cooperative fusion, then the back
/// connection re-running SGN-1 (same parameters) on all adapted outputs and
/// the features of SGN-2..N.
template <typename T>
McnOutputs<T> mcn_forward(const McnModel<T>& model, const Tensor<T>& input);

template <typename T>
std::size_t count_params(const McnModel<T>& model);

template <typename T>
std::size_t count_params(const Sgn<T>& sgn);

/// Reconstructs the architecture from checkpoint tensor names and shapes.
McnConfig config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mcn
