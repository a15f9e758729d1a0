#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

enum class CfaKind { Bayer, XTrans };
enum class CfaColor : std::uint8_t { Red = 0, Green = 1, Blue = 2 };

// Colour filter array layout: a period x period colour map (2 for Bayer, 6 for
// X-Trans). Packing folds each block x block cell of the mosaic (2 for Bayer,
// 3 for X-Trans) into one pixel with one channel per site. Channels are ordered
// by colour (red, green, blue) and by row-major site order within a colour,
// giving (R, G1, G2, B) for Bayer and (R, R, G x 5, B, B) for X-Trans.
class Cfa {
public:
    static Cfa bayer(std::string_view layout = "RGGB");
    // Default is the common X-Trans layout; `layout` takes 36 letters, rows
    // optionally separated by '/'.
    static Cfa xtrans(std::string_view layout = "GGRGGB/GGBGGR/BRGRBG/GGBGGR/GGRGGB/RBGBRG");
    static Cfa parse(std::string_view kind, std::string_view layout);

    CfaKind kind() const { return kind_; }
    std::size_t period() const { return period_; }
    std::size_t block() const { return block_; }
    std::size_t packed_channels() const { return block_ * block_; }
    CfaColor color_at(std::size_t y, std::size_t x) const {
        return pattern_[(y % period_) * period_ + (x % period_)];
    }
    std::string kind_name() const { return kind_ == CfaKind::Bayer ? "bayer" : "xtrans"; }
    // Pattern letters, rows separated by '/'.
    std::string pattern_string() const;

    // Site (dy * block + dx) feeding channel c for the packed cell at (cy, cx).
    std::size_t site_of_channel(std::size_t cy, std::size_t cx, std::size_t channel) const;
    // Colour carried by channel c; identical for every packed cell.
    CfaColor channel_color(std::size_t channel) const { return channel_colors_[channel]; }

    bool operator==(const Cfa& other) const { return kind_ == other.kind_ && pattern_ == other.pattern_; }

private:
    Cfa(CfaKind kind, std::size_t period, std::size_t block, std::vector<CfaColor> pattern);

    CfaKind kind_;
    std::size_t period_;
    std::size_t block_;
    std::vector<CfaColor> pattern_;
    // [cell_type][channel] -> site; cell_type = (cy % cells) * cells + (cx % cells)
    std::vector<std::vector<std::size_t>> channel_sites_;
    std::vector<CfaColor> channel_colors_;
};

// Single-channel sensor mosaic.
struct RawFrame {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint16_t> data;  // row-major
    Cfa cfa = Cfa::bayer();
    double black_level = 512.0;
    double white_level = 16383.0;
    double exposure_ratio = 1.0;

    std::uint16_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    // Throws ParameterError / DimensionError when an invariant is violated.
    void validate() const;
};

// Parameters of the nonlinear raw amplification.
struct IlluminationParams {
    double r = 1.0;
    double alpha = 1e-6;
    double beta = 1.0;
    double ratio = 1.0;

    // beta = 1: uniform linear gain `ratio`, used while training.
    static IlluminationParams for_training(double ratio) { return {1.0, 1e-6, 1.0, ratio}; }
    // beta = 1 / ratio: highlight-preserving gain for HDR scenes.
    static IlluminationParams for_hdr(double ratio) { return {1.0, 1e-6, 1.0 / ratio, ratio}; }

    // r > 0, alpha in (0, 1), ratio >= 1, beta in [1/ratio, 1]. A beta up to
    // 0.1% below 1/ratio (rounded decimal input) is accepted and snapped.
    void validate() const;
    double effective_beta() const;
};

/// Illumination map m(x) = exp(-r x) * ln(x + alpha) / ln(alpha).
double illumination_map(double x, double r, double alpha);

/// Per-pixel gain M = max(m(x), beta) * ratio, computed in double precision.
double rimef_gain(double x, const IlluminationParams& params);

/// (v - black) / (white - black) clamped to [0, 1]; shape (H, W).
template <typename T>
Tensor<T> normalize_black_level(const RawFrame& frame);

/// Elementwise gain map for x in [0, 1].
template <typename T>
Tensor<T> rimef_gain(const Tensor<T>& x, const IlluminationParams& params);

/// Elementwise x * gain clamped to [0, 1].
template <typename T>
Tensor<T> amplify(const Tensor<T>& x, const Tensor<T>& gain);

/// (H, W) Bayer mosaic -> (1, 4, H/2, W/2) with channels (R, G1, G2, B).
template <typename T>
Tensor<T> pack_bayer(const Tensor<T>& mosaic, const Cfa& cfa);

template <typename T>
Tensor<T> unpack_bayer(const Tensor<T>& packed, const Cfa& cfa);

/// (H, W) X-Trans mosaic -> (1, 9, H/3, W/3); H and W divisible by 6.
template <typename T>
Tensor<T> pack_xtrans(const Tensor<T>& mosaic, const Cfa& cfa);

template <typename T>
Tensor<T> unpack_xtrans(const Tensor<T>& packed, const Cfa& cfa);

/// Dispatches on the CFA kind.
template <typename T>
Tensor<T> pack_mosaic(const Tensor<T>& mosaic, const Cfa& cfa);

template <typename T>
Tensor<T> unpack_mosaic(const Tensor<T>& packed, const Cfa& cfa);

/// normalize -> RIMEF amplify (full resolution) -> pack. Returns (1, C, h, w).
Tensor<float> preprocess_frame(const RawFrame& frame, const IlluminationParams& params);

/// Amplified full-resolution mosaic before packing, shape (H, W).
Tensor<float> amplified_mosaic(const RawFrame& frame, const IlluminationParams& params);

/// Naive RGB rendering of a packed tensor: every pixel of a packed cell takes
/// the mean of that cell's channels per colour. Returns (1, 3, H, W).
Tensor<float> render_packed(const Tensor<float>& packed, const Cfa& cfa);

// Sidecar metadata: `key = value` lines (cfa, pattern, black_level,
// white_level, exposure_ratio).
void write_raw_metadata(std::ostream& out, const RawFrame& frame);
void save_raw_frame(const std::filesystem::path& mcnt_path, const std::filesystem::path& meta_path,
                    const RawFrame& frame);
RawFrame load_raw_frame(const std::filesystem::path& mcnt_path, const std::filesystem::path& meta_path);

}  // namespace mcn
