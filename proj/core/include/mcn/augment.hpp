#pragma once

#include <cstddef>

#include "mcn/rng.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

// Geometric transform shared by a packed input and its target. Coordinates
// and the crop size are in packed pixels; the target window is `factor`
// times larger. Applied as crop, horizontal flip, vertical flip, then
// `rotations` quarter turns counter-clockwise.
struct AugmentDraw {
    std::size_t y0 = 0;
    std::size_t x0 = 0;
    std::size_t crop = 0;
    bool flip_h = false;
    bool flip_v = false;
    unsigned rotations = 0;
};

struct AugmentedPair {
    Tensor<float> input;
    Tensor<float> target;
    AugmentDraw draw;
};

// Spatial helpers on (N, C, H, W) tensors; none record gradients.
Tensor<float> crop_window(const Tensor<float>& x, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
Tensor<float> flip_horizontal(const Tensor<float>& x);
Tensor<float> flip_vertical(const Tensor<float>& x);
Tensor<float> rotate90(const Tensor<float>& x, unsigned quarter_turns);

/// Replicates the last row/column until H and W are multiples of `multiple`.
Tensor<float> pad_to_multiple(const Tensor<float>& x, std::size_t multiple);

/// Draws a square crop of `crop` packed pixels plus random flips and a
/// multiple-of-90-degree rotation. `augment = false` keeps only the crop.
AugmentDraw draw_augmentation(std::size_t packed_h, std::size_t packed_w, std::size_t crop, bool augment, Rng& rng);

/// Applies `draw` to both tensors; target extents must be factor x input.
AugmentedPair apply_augmentation(const Tensor<float>& input, const Tensor<float>& target, std::size_t factor,
                                 const AugmentDraw& draw);

AugmentedPair augment_pair(const Tensor<float>& input, const Tensor<float>& target, std::size_t factor,
                           std::size_t crop, bool augment, Rng& rng);

/// Undoes flips and rotations, returning the cropped windows in their
/// original orientation.
AugmentedPair undo_augmentation(const AugmentedPair& pair);

}  // namespace mcn
