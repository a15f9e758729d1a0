#include "mcn/augment.hpp"

#include <algorithm>

#include "mcn/error.hpp"

namespace mcn {

namespace {

void require_4d(const Tensor<float>& x, const char* what) {
    if (x.rank() != 4) throw DimensionError(std::string(what) + ": expected (N,C,H,W), got " + shape_to_string(x.shape()));
}

// out(n, c, y, x) = in(n, c, src(y, x)) for a per-pixel source map.
template <typename Map>
Tensor<float> remap(const Tensor<float>& x, std::size_t oh, std::size_t ow, Map src) {
    const auto& s = x.shape();
    const std::size_t planes = s[0] * s[1];
    const std::size_t h = s[2];
    const std::size_t w = s[3];
    std::vector<float> out(planes * oh * ow);
    auto in = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const auto [sy, sx] = src(y, xx);
                out[(p * oh + y) * ow + xx] = in[(p * h + sy) * w + sx];
            }
        }
    }
    return Tensor<float>({s[0], s[1], oh, ow}, std::move(out));
}

}  // namespace

Tensor<float> crop_window(const Tensor<float>& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    require_4d(x, "crop_window");
    if (y0 + h > x.dim(2) || x0 + w > x.dim(3)) {
        throw DimensionError("crop_window: " + std::to_string(h) + "x" + std::to_string(w) + " window at (" +
                             std::to_string(y0) + "," + std::to_string(x0) + ") exceeds " + shape_to_string(x.shape()));
    }
    return remap(x, h, w, [&](std::size_t y, std::size_t xx) { return std::pair{y0 + y, x0 + xx}; });
}

Tensor<float> flip_horizontal(const Tensor<float>& x) {
    require_4d(x, "flip_horizontal");
    const std::size_t w = x.dim(3);
    return remap(x, x.dim(2), w, [&](std::size_t y, std::size_t xx) { return std::pair{y, w - 1 - xx}; });
}

Tensor<float> flip_vertical(const Tensor<float>& x) {
    require_4d(x, "flip_vertical");
    const std::size_t h = x.dim(2);
    return remap(x, h, x.dim(3), [&](std::size_t y, std::size_t xx) { return std::pair{h - 1 - y, xx}; });
}

Tensor<float> rotate90(const Tensor<float>& x, unsigned quarter_turns) {
    require_4d(x, "rotate90");
    const std::size_t h = x.dim(2);
    const std::size_t w = x.dim(3);
    switch (quarter_turns % 4) {
        case 0:
            return x.detach();
        case 1:  // counter-clockwise: out(y, x) = in(x, w - 1 - y)
            return remap(x, w, h, [&](std::size_t y, std::size_t xx) { return std::pair{xx, w - 1 - y}; });
        case 2:
            return remap(x, h, w, [&](std::size_t y, std::size_t xx) { return std::pair{h - 1 - y, w - 1 - xx}; });
        default:  // out(y, x) = in(h - 1 - x, y)
            return remap(x, w, h, [&](std::size_t y, std::size_t xx) { return std::pair{h - 1 - xx, y}; });
    }
}

Tensor<float> pad_to_multiple(const Tensor<float>& x, std::size_t multiple) {
    require_4d(x, "pad_to_multiple");
    if (multiple == 0) throw ParameterError("pad_to_multiple: multiple must be positive");
    const std::size_t h = x.dim(2);
    const std::size_t w = x.dim(3);
    const std::size_t oh = (h + multiple - 1) / multiple * multiple;
    const std::size_t ow = (w + multiple - 1) / multiple * multiple;
    if (oh == h && ow == w) return x.detach();
    return remap(x, oh, ow, [&](std::size_t y, std::size_t xx) { return std::pair{std::min(y, h - 1), std::min(xx, w - 1)}; });
}

AugmentDraw draw_augmentation(std::size_t packed_h, std::size_t packed_w, std::size_t crop, bool augment, Rng& rng) {
    if (crop == 0 || crop > packed_h || crop > packed_w) {
        throw DimensionError("augment: crop " + std::to_string(crop) + " does not fit a " + std::to_string(packed_h) +
                             "x" + std::to_string(packed_w) + " packed image");
    }
    AugmentDraw d;
    d.crop = crop;
    d.y0 = rng.below(packed_h - crop + 1);
    d.x0 = rng.below(packed_w - crop + 1);
    if (augment) {
        d.flip_h = rng.coin();
        d.flip_v = rng.coin();
        d.rotations = static_cast<unsigned>(rng.below(4));
    }
    return d;
}

AugmentedPair apply_augmentation(const Tensor<float>& input, const Tensor<float>& target, std::size_t factor,
                                 const AugmentDraw& draw) {
    require_4d(input, "augment");
    require_4d(target, "augment");
    if (target.dim(2) != factor * input.dim(2) || target.dim(3) != factor * input.dim(3)) {
        throw DimensionError("augment: target " + shape_to_string(target.shape()) + " is not " +
                             std::to_string(factor) + "x input " + shape_to_string(input.shape()));
    }
    AugmentedPair out;
    out.draw = draw;
    out.input = crop_window(input, draw.y0, draw.x0, draw.crop, draw.crop);
    out.target = crop_window(target, factor * draw.y0, factor * draw.x0, factor * draw.crop, factor * draw.crop);
    if (draw.flip_h) {
        out.input = flip_horizontal(out.input);
        out.target = flip_horizontal(out.target);
    }
    if (draw.flip_v) {
        out.input = flip_vertical(out.input);
        out.target = flip_vertical(out.target);
    }
    if (draw.rotations % 4 != 0) {
        out.input = rotate90(out.input, draw.rotations);
        out.target = rotate90(out.target, draw.rotations);
    }
    return out;
}

AugmentedPair augment_pair(const Tensor<float>& input, const Tensor<float>& target, std::size_t factor,
                           std::size_t crop, bool augment, Rng& rng) {
    require_4d(input, "augment");
    const auto draw = draw_augmentation(input.dim(2), input.dim(3), crop, augment, rng);
    return apply_augmentation(input, target, factor, draw);
}

AugmentedPair undo_augmentation(const AugmentedPair& pair) {
    AugmentedPair out = pair;
    const unsigned back = (4 - pair.draw.rotations % 4) % 4;
    if (back != 0) {
        out.input = rotate90(out.input, back);
        out.target = rotate90(out.target, back);
    }
    if (pair.draw.flip_v) {
        out.input = flip_vertical(out.input);
        out.target = flip_vertical(out.target);
    }
    if (pair.draw.flip_h) {
        out.input = flip_horizontal(out.input);
        out.target = flip_horizontal(out.target);
    }
    out.draw.flip_h = out.draw.flip_v = false;
    out.draw.rotations = 0;
    return out;
}

}  // namespace mcn
