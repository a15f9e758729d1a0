#pragma once

// Synthetic paired data: a long-exposure sRGB-like ground truth and the
// matching short-exposure sensor mosaic.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcn/error.hpp"
#include "mcn/raw_pipeline.hpp"
#include "mcn/rng.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

inline constexpr double kSynthRatios[3] = {100.0, 250.0, 300.0};

/// Deterministic (1, 3, H, W) scene in [0, 1]: smooth gradients, random
/// rectangles and disks, and one to three highlight spots above 0.95. Values
/// sit on the 14-bit sensor grid of the default black/white levels so that
/// mosaicking is lossless. H and W must be divisible by 4.
Tensor<float> generate_scene(std::uint64_t seed, std::size_t height, std::size_t width);

/// Noiseless unit-exposure mosaic: each site samples its CFA colour and is
/// encoded as round(black + x (white - black)).
RawFrame mosaic(const Tensor<float>& rgb, const Cfa& cfa, double black_level = 512.0, double white_level = 16383.0);

// Per-site noise in normalised units: variance = shot * signal + read^2.
struct NoiseModel {
    double shot = 2e-5;
    double read_sigma = 2e-4;

    static NoiseModel none() { return {0.0, 0.0}; }
};

/// Divides the normalised signal by `ratio`, adds shot and read noise,
/// quantises to sensor integers and clamps to [black, white].
RawFrame simulate_short_exposure(const RawFrame& raw, double ratio, const NoiseModel& noise, Rng& rng);

struct ScenePair {
    Tensor<float> ground_truth;  // (1, 3, H, W)
    RawFrame raw_short;
    std::string scene_id;
    std::uint64_t seed = 0;
};

/// Scene, mosaic and short exposure from one seed. `ratio <= 0` draws the
/// ratio from kSynthRatios.
ScenePair make_scene_pair(std::uint64_t seed, std::size_t size, const Cfa& cfa, const NoiseModel& noise,
                          double ratio = 0.0);

/// Scene with a light source that stays bright in the short exposure: the
/// highlight disk has normalised short-exposure level `highlight_level`, so
/// its true radiance is highlight_level * ratio (clipped to 1 in the target).
/// `highlight_mask` receives a (H, W) 0/1 map of the disk core.
ScenePair make_hdr_pair(std::uint64_t seed, std::size_t size, const Cfa& cfa, double ratio, double highlight_level,
                        const NoiseModel& noise, Tensor<float>* highlight_mask = nullptr);

struct ManifestEntry {
    std::filesystem::path input;
    std::filesystem::path meta;
    std::filesystem::path target;
    double ratio = 1.0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    /// `input;meta;target;ratio` lines; paths are written relative to `base`.
    void write(std::ostream& out, const std::filesystem::path& base) const;
};

class DatasetError : public IoError {
public:
    enum class Kind { MissingFile, MalformedLine, InvalidRatio };
    DatasetError(Kind kind, const std::string& message) : IoError(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Parses and validates a manifest. Relative paths resolve against the
/// manifest's directory; blank lines and lines starting with '#' are skipped.
DatasetManifest load_dataset(const std::filesystem::path& manifest_path);

struct SynthOptions {
    std::size_t count = 8;
    std::size_t size = 64;
    Cfa cfa = Cfa::bayer();
    NoiseModel noise;
    std::uint64_t seed = 0;
    bool previews = true;
    double ratio = 0.0;  // <= 0 draws from kSynthRatios (100 for HDR scenes)
    // HDR scenes carry a light source at `highlight_level` in the short
    // exposure and also write `scene_NNN.mask.mcnt`.
    bool hdr = false;
    double highlight_level = 0.9;
};

/// Writes `scene_NNN.raw.mcnt`, `.meta`, `.target.mcnt` (and P6 previews)
/// plus `manifest.txt` into `dir`. Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace mcn
