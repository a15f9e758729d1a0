#include "mcn/raw_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "mcn/config_file.hpp"
#include "mcn/error.hpp"
#include "mcn/tensor_io.hpp"

namespace mcn {

namespace {

CfaColor color_from_letter(char c) {
    switch (c) {
        case 'R': case 'r': return CfaColor::Red;
        case 'G': case 'g': return CfaColor::Green;
        case 'B': case 'b': return CfaColor::Blue;
        default: throw ParameterError(std::string("CFA pattern: unknown colour letter '") + c + "'");
    }
}

char letter_of(CfaColor c) {
    switch (c) {
        case CfaColor::Red: return 'R';
        case CfaColor::Green: return 'G';
        case CfaColor::Blue: return 'B';
    }
    return '?';
}

std::vector<CfaColor> parse_letters(std::string_view layout, std::size_t expected) {
    std::vector<CfaColor> out;
    for (char c : layout) {
        if (c == '/' || c == ' ' || c == ',') continue;
        out.push_back(color_from_letter(c));
    }
    if (out.size() != expected) {
        throw ParameterError("CFA pattern '" + std::string(layout) + "' must list " + std::to_string(expected) +
                             " sites");
    }
    return out;
}

void require_mosaic(const Shape& s, std::size_t period, const char* op) {
    if (s.size() != 2) throw DimensionError(std::string(op) + ": mosaic must be (H, W), got " + shape_to_string(s));
    if (s[0] % period != 0 || s[1] % period != 0) {
        throw DimensionError(std::string(op) + ": mosaic " + shape_to_string(s) + " not divisible by CFA period " +
                             std::to_string(period));
    }
}

template <typename T>
Tensor<T> pack_generic(const Tensor<T>& mosaic, const Cfa& cfa, const char* op) {
    require_mosaic(mosaic.shape(), cfa.period(), op);
    const std::size_t h = mosaic.dim(0), w = mosaic.dim(1), b = cfa.block();
    const std::size_t ph = h / b, pw = w / b, ch = cfa.packed_channels();
    auto src = mosaic.data();
    std::vector<T> out(ch * ph * pw);
    for (std::size_t cy = 0; cy < ph; ++cy) {
        for (std::size_t cx = 0; cx < pw; ++cx) {
            for (std::size_t c = 0; c < ch; ++c) {
                const std::size_t site = cfa.site_of_channel(cy, cx, c);
                out[(c * ph + cy) * pw + cx] = src[(cy * b + site / b) * w + cx * b + site % b];
            }
        }
    }
    return Tensor<T>({1, ch, ph, pw}, std::move(out));
}

template <typename T>
Tensor<T> unpack_generic(const Tensor<T>& packed, const Cfa& cfa, const char* op) {
    const auto& s = packed.shape();
    if (s.size() != 4 || s[0] != 1 || s[1] != cfa.packed_channels()) {
        throw DimensionError(std::string(op) + ": expected (1, " + std::to_string(cfa.packed_channels()) +
                             ", h, w), got " + shape_to_string(s));
    }
    const std::size_t b = cfa.block(), ph = s[2], pw = s[3], h = ph * b, w = pw * b, ch = s[1];
    if (h % cfa.period() != 0 || w % cfa.period() != 0) {
        throw DimensionError(std::string(op) + ": packed extent " + shape_to_string(s) +
                             " does not cover whole CFA periods");
    }
    auto src = packed.data();
    std::vector<T> out(h * w);
    for (std::size_t cy = 0; cy < ph; ++cy) {
        for (std::size_t cx = 0; cx < pw; ++cx) {
            for (std::size_t c = 0; c < ch; ++c) {
                const std::size_t site = cfa.site_of_channel(cy, cx, c);
                out[(cy * b + site / b) * w + cx * b + site % b] = src[(c * ph + cy) * pw + cx];
            }
        }
    }
    return Tensor<T>({h, w}, std::move(out));
}

}  // namespace

Cfa::Cfa(CfaKind kind, std::size_t period, std::size_t block, std::vector<CfaColor> pattern)
    : kind_(kind), period_(period), block_(block), pattern_(std::move(pattern)) {
    const std::size_t cells = period_ / block_;
    for (std::size_t ty = 0; ty < cells; ++ty) {
        for (std::size_t tx = 0; tx < cells; ++tx) {
            std::vector<std::size_t> sites(block_ * block_);
            for (std::size_t i = 0; i < sites.size(); ++i) sites[i] = i;
            auto color_of = [&](std::size_t site) {
                return pattern_[(ty * block_ + site / block_) * period_ + tx * block_ + site % block_];
            };
            std::stable_sort(sites.begin(), sites.end(),
                             [&](std::size_t a, std::size_t b) { return color_of(a) < color_of(b); });
            std::vector<CfaColor> colors;
            for (auto s : sites) colors.push_back(color_of(s));
            if (channel_sites_.empty()) {
                channel_colors_ = colors;
            } else if (colors != channel_colors_) {
                throw ParameterError("CFA pattern " + pattern_string() +
                                     ": every packed cell must hold the same colour counts");
            }
            channel_sites_.push_back(std::move(sites));
        }
    }
    const auto count = [&](CfaColor c) { return std::count(channel_colors_.begin(), channel_colors_.end(), c); };
    const bool ok = kind_ == CfaKind::Bayer
                        ? count(CfaColor::Red) == 1 && count(CfaColor::Green) == 2 && count(CfaColor::Blue) == 1
                        : count(CfaColor::Red) == 2 && count(CfaColor::Green) == 5 && count(CfaColor::Blue) == 2;
    if (!ok) throw ParameterError("CFA pattern " + pattern_string() + " has unexpected colour counts");
}

Cfa Cfa::bayer(std::string_view layout) { return Cfa(CfaKind::Bayer, 2, 2, parse_letters(layout, 4)); }

Cfa Cfa::xtrans(std::string_view layout) { return Cfa(CfaKind::XTrans, 6, 3, parse_letters(layout, 36)); }

Cfa Cfa::parse(std::string_view kind, std::string_view layout) {
    if (kind == "bayer") return layout.empty() ? bayer() : bayer(layout);
    if (kind == "xtrans") return layout.empty() ? xtrans() : xtrans(layout);
    throw ParameterError("unknown CFA kind '" + std::string(kind) + "' (expected bayer or xtrans)");
}

std::string Cfa::pattern_string() const {
    std::string out;
    for (std::size_t y = 0; y < period_; ++y) {
        if (y) out += '/';
        for (std::size_t x = 0; x < period_; ++x) out += letter_of(pattern_[y * period_ + x]);
    }
    return out;
}

std::size_t Cfa::site_of_channel(std::size_t cy, std::size_t cx, std::size_t channel) const {
    const std::size_t cells = period_ / block_;
    return channel_sites_[(cy % cells) * cells + (cx % cells)][channel];
}

void RawFrame::validate() const {
    if (!(black_level < white_level)) {
        throw ParameterError("raw frame: black level " + std::to_string(black_level) +
                             " must be below white level " + std::to_string(white_level));
    }
    if (!(exposure_ratio >= 1.0)) {
        throw ParameterError("raw frame: exposure ratio must be >= 1, got " + std::to_string(exposure_ratio));
    }
    if (height % cfa.period() != 0 || width % cfa.period() != 0) {
        throw DimensionError("raw frame: " + std::to_string(height) + "x" + std::to_string(width) +
                             " not divisible by CFA period " + std::to_string(cfa.period()));
    }
    if (data.size() != height * width) throw DimensionError("raw frame: data size does not match extent");
}

void IlluminationParams::validate() const {
    if (!(r > 0.0) || !std::isfinite(r)) throw ParameterError("RIMEF: r must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("RIMEF: alpha must lie in (0, 1)");
    if (!(ratio >= 1.0) || !std::isfinite(ratio)) throw ParameterError("RIMEF: ratio must be >= 1");
    const double lower = 1.0 / ratio;
    if (!(beta >= lower * (1.0 - 1e-3) && beta <= 1.0)) {
        throw ParameterError("RIMEF: beta " + std::to_string(beta) + " outside [1/ratio, 1] = [" +
                             std::to_string(lower) + ", 1]");
    }
}

double IlluminationParams::effective_beta() const { return std::max(beta, 1.0 / ratio); }

double illumination_map(double x, double r, double alpha) {
    // Near x + alpha = 1 the log is evaluated as log1p of an exactly formed
    // offset so the sign change around x = 1 - alpha keeps full precision.
    const double log_term = x >= 0.5 ? std::log1p((x - 1.0) + alpha) : std::log(x + alpha);
    return std::exp(-r * x) * log_term / std::log(alpha);
}

double rimef_gain(double x, const IlluminationParams& params) {
    return std::max(illumination_map(x, params.r, params.alpha), params.effective_beta()) * params.ratio;
}

template <typename T>
Tensor<T> normalize_black_level(const RawFrame& frame) {
    frame.validate();
    const double range = frame.white_level - frame.black_level;
    std::vector<T> out(frame.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = (static_cast<double>(frame.data[i]) - frame.black_level) / range;
        out[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
    }
    return Tensor<T>({frame.height, frame.width}, std::move(out));
}

template <typename T>
Tensor<T> rimef_gain(const Tensor<T>& x, const IlluminationParams& params) {
    params.validate();
    auto src = x.data();
    std::vector<T> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double v = static_cast<double>(src[i]);
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ParameterError("RIMEF: input value " + std::to_string(v) + " outside [0, 1]");
        }
        out[i] = static_cast<T>(rimef_gain(v, params));
    }
    return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> amplify(const Tensor<T>& x, const Tensor<T>& gain) {
    if (x.shape() != gain.shape()) {
        throw DimensionError("amplify: shape mismatch " + shape_to_string(x.shape()) + " vs " +
                             shape_to_string(gain.shape()));
    }
    auto a = x.data(), g = gain.data();
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a[i] * g[i], T{0}, T{1});
    return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> pack_bayer(const Tensor<T>& mosaic, const Cfa& cfa) {
    if (cfa.kind() != CfaKind::Bayer) throw ParameterError("pack_bayer: CFA is not Bayer");
    return pack_generic(mosaic, cfa, "pack_bayer");
}

template <typename T>
Tensor<T> unpack_bayer(const Tensor<T>& packed, const Cfa& cfa) {
    if (cfa.kind() != CfaKind::Bayer) throw ParameterError("unpack_bayer: CFA is not Bayer");
    return unpack_generic(packed, cfa, "unpack_bayer");
}

template <typename T>
Tensor<T> pack_xtrans(const Tensor<T>& mosaic, const Cfa& cfa) {
    if (cfa.kind() != CfaKind::XTrans) throw ParameterError("pack_xtrans: CFA is not X-Trans");
    return pack_generic(mosaic, cfa, "pack_xtrans");
}

template <typename T>
Tensor<T> unpack_xtrans(const Tensor<T>& packed, const Cfa& cfa) {
    if (cfa.kind() != CfaKind::XTrans) throw ParameterError("unpack_xtrans: CFA is not X-Trans");
    return unpack_generic(packed, cfa, "unpack_xtrans");
}

template <typename T>
Tensor<T> pack_mosaic(const Tensor<T>& mosaic, const Cfa& cfa) {
    return cfa.kind() == CfaKind::Bayer ? pack_bayer(mosaic, cfa) : pack_xtrans(mosaic, cfa);
}

template <typename T>
Tensor<T> unpack_mosaic(const Tensor<T>& packed, const Cfa& cfa) {
    return cfa.kind() == CfaKind::Bayer ? unpack_bayer(packed, cfa) : unpack_xtrans(packed, cfa);
}

Tensor<float> amplified_mosaic(const RawFrame& frame, const IlluminationParams& params) {
    const auto x = normalize_black_level<double>(frame);
    return amplify(x, rimef_gain(x, params)).cast<float>();
}

Tensor<float> preprocess_frame(const RawFrame& frame, const IlluminationParams& params) {
    return pack_mosaic(amplified_mosaic(frame, params), frame.cfa);
}

Tensor<float> render_packed(const Tensor<float>& packed, const Cfa& cfa) {
    const auto& s = packed.shape();
    if (s.size() != 4 || s[0] != 1 || s[1] != cfa.packed_channels()) {
        throw DimensionError("render_packed: expected (1, " + std::to_string(cfa.packed_channels()) +
                             ", h, w), got " + shape_to_string(s));
    }
    const std::size_t b = cfa.block(), ph = s[2], pw = s[3], h = ph * b, w = pw * b;
    std::array<int, 3> counts{};
    for (std::size_t c = 0; c < s[1]; ++c) ++counts[static_cast<int>(cfa.channel_color(c))];
    auto src = packed.data();
    std::vector<float> out(3 * h * w);
    for (std::size_t cy = 0; cy < ph; ++cy) {
        for (std::size_t cx = 0; cx < pw; ++cx) {
            std::array<double, 3> acc{};
            for (std::size_t c = 0; c < s[1]; ++c) {
                acc[static_cast<int>(cfa.channel_color(c))] += src[(c * ph + cy) * pw + cx];
            }
            for (int k = 0; k < 3; ++k) {
                const auto v = static_cast<float>(acc[k] / counts[k]);
                for (std::size_t dy = 0; dy < b; ++dy) {
                    for (std::size_t dx = 0; dx < b; ++dx) {
                        out[(k * h + cy * b + dy) * w + cx * b + dx] = v;
                    }
                }
            }
        }
    }
    return Tensor<float>({1, 3, h, w}, std::move(out));
}

void write_raw_metadata(std::ostream& out, const RawFrame& frame) {
    std::ostringstream os;
    os.precision(17);
    os << "cfa = " << frame.cfa.kind_name() << '\n';
    os << "pattern = " << frame.cfa.pattern_string() << '\n';
    os << "black_level = " << frame.black_level << '\n';
    os << "white_level = " << frame.white_level << '\n';
    os << "exposure_ratio = " << frame.exposure_ratio << '\n';
    out << os.str();
}

void save_raw_frame(const std::filesystem::path& mcnt_path, const std::filesystem::path& meta_path,
                    const RawFrame& frame) {
    frame.validate();
    {
        std::ofstream out(mcnt_path, std::ios::binary);
        if (!out) throw IoError("cannot open " + mcnt_path.string() + " for writing");
        write_mcnt_u16(out, {frame.height, frame.width}, frame.data);
    }
    std::ofstream meta(meta_path);
    if (!meta) throw IoError("cannot open " + meta_path.string() + " for writing");
    write_raw_metadata(meta, frame);
    if (!meta) throw IoError("write failed: " + meta_path.string());
}

RawFrame load_raw_frame(const std::filesystem::path& mcnt_path, const std::filesystem::path& meta_path) {
    const auto blob = load_mcnt(mcnt_path);
    if (blob.dtype() != McntDtype::U16 || blob.shape.size() != 2) {
        throw FormatError(mcnt_path.string() + ": raw frame must be a rank-2 u16 MCNT tensor");
    }
    const auto meta = ConfigFile::load(meta_path);
    const std::string ctx = meta_path.string();
    RawFrame frame;
    frame.height = blob.shape[0];
    frame.width = blob.shape[1];
    frame.data = std::get<std::vector<std::uint16_t>>(blob.values);
    try {
        frame.cfa = Cfa::parse(meta.get_string("", "cfa", "bayer"), meta.get_string("", "pattern", ""));
        frame.black_level = meta.get_double("", "black_level", 512.0);
        frame.white_level = meta.get_double("", "white_level", 16383.0);
        frame.exposure_ratio = meta.get_double("", "exposure_ratio", 1.0);
    } catch (const Error& e) {
        throw FormatError(ctx + ": " + e.what());
    }
    frame.validate();
    return frame;
}

#define MCN_INSTANTIATE_RAW(T)                                                          \
    template Tensor<T> normalize_black_level<T>(const RawFrame&);                       \
    template Tensor<T> rimef_gain<T>(const Tensor<T>&, const IlluminationParams&);      \
    template Tensor<T> amplify<T>(const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> pack_bayer<T>(const Tensor<T>&, const Cfa&);                     \
    template Tensor<T> unpack_bayer<T>(const Tensor<T>&, const Cfa&);                   \
    template Tensor<T> pack_xtrans<T>(const Tensor<T>&, const Cfa&);                    \
    template Tensor<T> unpack_xtrans<T>(const Tensor<T>&, const Cfa&);                  \
    template Tensor<T> pack_mosaic<T>(const Tensor<T>&, const Cfa&);                    \
    template Tensor<T> unpack_mosaic<T>(const Tensor<T>&, const Cfa&);

MCN_INSTANTIATE_RAW(float)
MCN_INSTANTIATE_RAW(double)

#undef MCN_INSTANTIATE_RAW

}  // namespace mcn
