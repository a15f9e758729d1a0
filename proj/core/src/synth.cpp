#include "mcn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mcn/config_file.hpp"
#include "mcn/image_io.hpp"
#include "mcn/tensor_io.hpp"

namespace mcn {

namespace {

constexpr double kDefaultRange = 16383.0 - 512.0;

double quantize_to_sensor_grid(double v) {
    return std::round(std::clamp(v, 0.0, 1.0) * kDefaultRange) / kDefaultRange;
}

std::string scene_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%03zu", index);
    return buf;
}

std::size_t period_of(const Cfa& cfa) { return cfa.period(); }

void require_divisible(std::size_t h, std::size_t w, std::size_t d, const char* what) {
    if (h == 0 || w == 0 || h % d != 0 || w % d != 0) {
        throw DimensionError(std::string(what) + ": " + std::to_string(h) + "x" + std::to_string(w) +
                             " must be non-empty and divisible by " + std::to_string(d));
    }
}

}  // namespace

Tensor<float> generate_scene(std::uint64_t seed, std::size_t height, std::size_t width) {
    require_divisible(height, width, 4, "generate_scene");
    Rng rng(derive_seed(seed, hash_name("scene")));
    const double h = static_cast<double>(height);
    const double w = static_cast<double>(width);
    std::vector<double> img(3 * height * width);
    auto px = [&](std::size_t c, std::size_t y, std::size_t x) -> double& { return img[(c * height + y) * width + x]; };

    for (std::size_t c = 0; c < 3; ++c) {
        const double base = rng.uniform(0.05, 0.35);
        const double gx = rng.uniform(-0.2, 0.2);
        const double gy = rng.uniform(-0.2, 0.2);
        const double amp = rng.uniform(0.0, 0.05);
        const double fx = rng.uniform(0.5, 2.0) * 2.0 * std::numbers::pi / w;
        const double fy = rng.uniform(0.5, 2.0) * 2.0 * std::numbers::pi / h;
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double xd = static_cast<double>(x);
                const double yd = static_cast<double>(y);
                px(c, y, x) = base + gx * xd / w + gy * yd / h + amp * std::sin(fx * xd) * std::cos(fy * yd);
            }
        }
    }

    const std::size_t shapes = 3 + rng.below(4);
    for (std::size_t s = 0; s < shapes; ++s) {
        double color[3];
        for (auto& c : color) c = rng.uniform(0.05, 0.8);
        const bool disk = rng.coin();
        const double cy = rng.uniform(0.0, h);
        const double cx = rng.uniform(0.0, w);
        const double ry = rng.uniform(h / 16.0, h / 5.0);
        const double rx = disk ? ry : rng.uniform(w / 16.0, w / 5.0);
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy;
                const double dx = static_cast<double>(x) + 0.5 - cx;
                const bool inside = disk ? dx * dx + dy * dy <= ry * ry : std::abs(dx) <= rx && std::abs(dy) <= ry;
                if (inside) {
                    for (std::size_t c = 0; c < 3; ++c) px(c, y, x) = color[c];
                }
            }
        }
    }

    // Highlights: a near-white core with a soft halo.
    const std::size_t spots = 1 + rng.below(3);
    for (std::size_t s = 0; s < spots; ++s) {
        const double radius = std::max(2.0, std::min(h, w) / 16.0) * rng.uniform(1.0, 1.5);
        const double cy = rng.uniform(radius, h - radius);
        const double cx = rng.uniform(radius, w - radius);
        const double peak = rng.uniform(0.97, 1.0);
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy;
                const double dx = static_cast<double>(x) + 0.5 - cx;
                const double d = std::sqrt(dx * dx + dy * dy);
                if (d > 2.0 * radius) continue;
                const double t = d <= radius ? 1.0 : 1.0 - (d - radius) / radius;
                for (std::size_t c = 0; c < 3; ++c) {
                    px(c, y, x) = std::max(px(c, y, x), t * peak + (1.0 - t) * px(c, y, x));
                }
            }
        }
    }

    std::vector<float> out(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(quantize_to_sensor_grid(img[i]));
    return Tensor<float>({1, 3, height, width}, std::move(out));
}

RawFrame mosaic(const Tensor<float>& rgb, const Cfa& cfa, double black_level, double white_level) {
    const auto& s = rgb.shape();
    const bool ok = (s.size() == 4 && s[0] == 1 && s[1] == 3) || (s.size() == 3 && s[0] == 3);
    if (!ok) throw DimensionError("mosaic: expected (1,3,H,W) or (3,H,W), got " + shape_to_string(s));
    const std::size_t h = s[s.size() - 2];
    const std::size_t w = s[s.size() - 1];
    require_divisible(h, w, period_of(cfa), "mosaic");
    RawFrame f;
    f.height = h;
    f.width = w;
    f.cfa = cfa;
    f.black_level = black_level;
    f.white_level = white_level;
    f.exposure_ratio = 1.0;
    f.data.resize(h * w);
    f.validate();
    auto d = rgb.data();
    const double range = white_level - black_level;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const auto c = static_cast<std::size_t>(cfa.color_at(y, x));
            const double v = std::clamp(static_cast<double>(d[(c * h + y) * w + x]), 0.0, 1.0);
            f.data[y * w + x] = static_cast<std::uint16_t>(std::lround(black_level + v * range));
        }
    }
    return f;
}

RawFrame simulate_short_exposure(const RawFrame& raw, double ratio, const NoiseModel& noise, Rng& rng) {
    raw.validate();
    if (!(ratio >= 1.0) || !std::isfinite(ratio)) throw ParameterError("simulate_short_exposure: ratio must be >= 1");
    if (noise.shot < 0.0 || noise.read_sigma < 0.0) throw ParameterError("noise parameters must be non-negative");
    RawFrame out = raw;
    out.exposure_ratio = raw.exposure_ratio * ratio;
    const double range = raw.white_level - raw.black_level;
    for (std::size_t i = 0; i < raw.data.size(); ++i) {
        const double x = std::clamp((static_cast<double>(raw.data[i]) - raw.black_level) / range, 0.0, 1.0) / ratio;
        const double var = noise.shot * x + noise.read_sigma * noise.read_sigma;
        const double noisy = var > 0.0 ? x + std::sqrt(var) * rng.normal() : x;
        const double v = std::clamp(std::round(raw.black_level + noisy * range), raw.black_level, raw.white_level);
        out.data[i] = static_cast<std::uint16_t>(v);
    }
    return out;
}

ScenePair make_scene_pair(std::uint64_t seed, std::size_t size, const Cfa& cfa, const NoiseModel& noise, double ratio) {
    ScenePair p;
    p.seed = seed;
    p.scene_id = "seed" + std::to_string(seed);
    p.ground_truth = generate_scene(seed, size, size);
    Rng rng(derive_seed(seed, hash_name("exposure")));
    if (ratio <= 0.0) ratio = kSynthRatios[rng.below(3)];
    p.raw_short = simulate_short_exposure(mosaic(p.ground_truth, cfa), ratio, noise, rng);
    return p;
}

ScenePair make_hdr_pair(std::uint64_t seed, std::size_t size, const Cfa& cfa, double ratio, double highlight_level,
                        const NoiseModel& noise, Tensor<float>* highlight_mask) {
    if (!(ratio >= 1.0)) throw ParameterError("make_hdr_pair: ratio must be >= 1");
    if (!(highlight_level > 0.0 && highlight_level <= 1.0)) {
        throw ParameterError("make_hdr_pair: highlight level must lie in (0, 1]");
    }
    const Tensor<float> scene = generate_scene(seed, size, size);
    const std::size_t n = size;
    const std::size_t b = cfa.block();
    const double c = static_cast<double>(n) / 2.0;
    const double radius = static_cast<double>(n) / 6.0;
    auto inside = [&](std::size_t y, std::size_t x) {
        const double dy = static_cast<double>(y) + 0.5 - c;
        const double dx = static_cast<double>(x) + 0.5 - c;
        return dx * dx + dy * dy <= radius * radius;
    };

    // Radiance in long-exposure units; the light source far exceeds 1.
    std::vector<double> radiance(scene.data().begin(), scene.data().end());
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                if (inside(y, x)) radiance[(ch * n + y) * n + x] = highlight_level * ratio;
            }
        }
    }

    ScenePair p;
    p.seed = seed;
    p.scene_id = "hdr" + std::to_string(seed);
    std::vector<float> target(radiance.size());
    std::vector<float> short_rgb(radiance.size());
    for (std::size_t i = 0; i < radiance.size(); ++i) {
        target[i] = static_cast<float>(std::min(radiance[i], 1.0));
        short_rgb[i] = static_cast<float>(std::min(radiance[i] / ratio, 1.0));
    }
    p.ground_truth = Tensor<float>({1, 3, n, n}, std::move(target));
    Rng rng(derive_seed(seed, hash_name("hdr-exposure")));
    p.raw_short = simulate_short_exposure(mosaic(Tensor<float>({1, 3, n, n}, std::move(short_rgb)), cfa), 1.0, noise, rng);
    p.raw_short.exposure_ratio = ratio;

    if (highlight_mask) {
        // Pixels whose whole packed cell lies inside the disk.
        std::vector<float> mask(n * n, 0.0f);
        for (std::size_t cy = 0; cy < n / b; ++cy) {
            for (std::size_t cx = 0; cx < n / b; ++cx) {
                bool all = true;
                for (std::size_t dy = 0; dy < b && all; ++dy) {
                    for (std::size_t dx = 0; dx < b && all; ++dx) all = inside(cy * b + dy, cx * b + dx);
                }
                if (!all) continue;
                for (std::size_t dy = 0; dy < b; ++dy) {
                    for (std::size_t dx = 0; dx < b; ++dx) mask[(cy * b + dy) * n + cx * b + dx] = 1.0f;
                }
            }
        }
        *highlight_mask = Tensor<float>({n, n}, std::move(mask));
    }
    return p;
}

void DatasetManifest::write(std::ostream& out, const std::filesystem::path& base) const {
    auto rel = [&](const std::filesystem::path& p) {
        const auto r = p.lexically_relative(base);
        return (r.empty() ? p : r).generic_string();
    };
    for (const auto& e : entries) {
        out << rel(e.input) << ';' << rel(e.meta) << ';' << rel(e.target) << ';' << e.ratio << '\n';
    }
}

DatasetManifest load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) {
        throw DatasetError(DatasetError::Kind::MissingFile, "missing file: manifest '" + manifest_path.string() + "'");
    }
    const auto base = manifest_path.parent_path();
    DatasetManifest manifest;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(text);
        std::string field;
        while (std::getline(ss, field, ';')) fields.push_back(trim(field));
        const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
        if (fields.size() != 4 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
            throw DatasetError(DatasetError::Kind::MalformedLine,
                               "malformed manifest line " + where + ": expected input;meta;target;ratio");
        }
        ManifestEntry e;
        try {
            e.ratio = parse_double(fields[3], "ratio");
        } catch (const ConfigError&) {
            throw DatasetError(DatasetError::Kind::MalformedLine,
                               "malformed manifest line " + where + ": ratio '" + fields[3] + "' is not a number");
        }
        if (!(e.ratio >= 1.0) || !std::isfinite(e.ratio)) {
            throw DatasetError(DatasetError::Kind::InvalidRatio,
                               "invalid ratio " + fields[3] + " at " + where + " (must be >= 1)");
        }
        std::filesystem::path* slots[3] = {&e.input, &e.meta, &e.target};
        for (std::size_t k = 0; k < 3; ++k) {
            std::filesystem::path p(fields[k]);
            if (p.is_relative()) p = base / p;
            if (!std::filesystem::exists(p)) {
                throw DatasetError(DatasetError::Kind::MissingFile, "missing file: '" + p.string() + "' (" + where + ")");
            }
            *slots[k] = p;
        }
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SynthOptions& options) {
    if (options.count == 0) throw ParameterError("synth: count must be positive");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    DatasetManifest manifest;
    for (std::size_t i = 0; i < options.count; ++i) {
        const std::uint64_t seed = derive_seed(options.seed, i, hash_name("synth"));
        const std::string name = scene_name(i);
        ScenePair pair;
        if (options.hdr) {
            Tensor<float> mask;
            pair = make_hdr_pair(seed, options.size, options.cfa, options.ratio > 0.0 ? options.ratio : 100.0,
                                 options.highlight_level, options.noise, &mask);
            save_mcnt(dir / (name + ".mask.mcnt"), mask);
        } else {
            pair = make_scene_pair(seed, options.size, options.cfa, options.noise, options.ratio);
        }
        ManifestEntry e{dir / (name + ".raw.mcnt"), dir / (name + ".meta"), dir / (name + ".target.mcnt"),
                        pair.raw_short.exposure_ratio};
        save_raw_frame(e.input, e.meta, pair.raw_short);
        save_mcnt(e.target, pair.ground_truth);
        if (options.previews) {
            save_ppm(dir / (name + ".target.ppm"), pair.ground_truth);
            const auto amplified = preprocess_frame(pair.raw_short, IlluminationParams::for_training(e.ratio));
            save_ppm(dir / (name + ".input.ppm"), render_packed(amplified, pair.raw_short.cfa));
        }
        manifest.entries.push_back(std::move(e));
    }
    const auto path = dir / "manifest.txt";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    manifest.write(out, dir);
    if (!out) throw IoError("failed writing '" + path.string() + "'");
    return path;
}

}  // namespace mcn
