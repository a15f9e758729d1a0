#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mcn/error.hpp"
#include "mcn/synth.hpp"
#include "mcn/training.hpp"
#include "oracles.hpp"

using namespace mcn;
namespace fs = std::filesystem;

namespace {

constexpr double kRange = 16383.0 - 512.0;

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("mcn_synth_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST(Scene, RangeDeterminismAndDistinctness) {
    const auto a = generate_scene(1, 64, 64);
    ASSERT_EQ(a.shape(), (Shape{1, 3, 64, 64}));
    for (float v : a.data()) {
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
    }
    const auto again = generate_scene(1, 64, 64);
    EXPECT_TRUE(std::ranges::equal(a.data(), again.data()));
    const auto b = generate_scene(2, 64, 64);
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) differ += a.data()[i] != b.data()[i];
    EXPECT_GT(differ, a.numel() / 100);
}

TEST(Scene, EveryScenePassesHighlightThreshold) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = generate_scene(seed, 32, 48);
        const float peak = *std::max_element(s.data().begin(), s.data().end());
        EXPECT_GT(peak, 0.95f) << seed;
    }
}

TEST(Mosaic, ConstantGrayNormalizesBack) {
    const float c = static_cast<float>(std::round(0.37 * kRange) / kRange);
    for (const auto& cfa : {Cfa::bayer(), Cfa::xtrans()}) {
        const auto raw = mosaic(Tensor<float>({1, 3, 12, 12}, c), cfa);
        const auto x = normalize_black_level<float>(raw);
        for (float v : x.data()) EXPECT_EQ(v, c);
    }
    EXPECT_THROW(mosaic(Tensor<float>({1, 3, 6, 8}), Cfa::xtrans()), DimensionError);
    EXPECT_THROW(mosaic(Tensor<float>({1, 4, 6, 8}), Cfa::bayer()), DimensionError);
}

TEST(Mosaic, RoundTripAtSitesIsExact) {
    const auto rgb = generate_scene(3, 48, 48);
    for (const auto& cfa : {Cfa::bayer(), Cfa::xtrans()}) {
        const auto x = normalize_black_level<float>(mosaic(rgb, cfa));
        for (std::size_t y = 0; y < 48; ++y)
            for (std::size_t col = 0; col < 48; ++col) {
                const auto c = static_cast<std::size_t>(cfa.color_at(y, col));
                ASSERT_EQ(x.data()[y * 48 + col], rgb.at(0, c, y, col));
            }
    }
}

TEST(Mosaic, PackedChannelMeansMatchSiteMeans) {
    const auto rgb = generate_scene(4, 32, 32);
    const auto packed = pack_bayer(normalize_black_level<float>(mosaic(rgb, Cfa::bayer())), Cfa::bayer());
    // RGGB sites: (0,0) red, (0,1) and (1,0) green, (1,1) blue.
    const std::size_t dy[4] = {0, 0, 1, 1}, dx[4] = {0, 1, 0, 1}, col[4] = {0, 1, 1, 2};
    for (std::size_t ch = 0; ch < 4; ++ch) {
        double site = 0, chan = 0;
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) {
                site += rgb.at(0, col[ch], 2 * y + dy[ch], 2 * x + dx[ch]);
                chan += packed.at(0, ch, y, x);
            }
        EXPECT_NEAR(chan, site, 1e-9);
    }
}

TEST(ShortExposure, NoiselessDividesByRatio) {
    const auto raw = mosaic(generate_scene(5, 32, 32), Cfa::bayer());
    Rng rng(1);
    const auto s = simulate_short_exposure(raw, 250.0, NoiseModel::none(), rng);
    EXPECT_EQ(s.exposure_ratio, 250.0);
    const auto a = normalize_black_level<double>(raw), b = normalize_black_level<double>(s);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ASSERT_LE(std::abs(b.data()[i] - a.data()[i] / 250.0), 0.5 / kRange + 1e-15);
        // Amplifying back recovers the scene up to the amplified quantisation step.
        ASSERT_LE(std::abs(b.data()[i] * 250.0 - a.data()[i]), 250.0 * 0.5 / kRange + 1e-12);
    }
    EXPECT_THROW(simulate_short_exposure(raw, 0.5, NoiseModel::none(), rng), ParameterError);
}

TEST(ShortExposure, UnitRatioInputMatchesTargetAtSites) {
    auto pair = make_scene_pair(6, 32, Cfa::bayer(), NoiseModel::none(), 1.0);
    const auto sample = make_training_sample(pair);
    const auto unpacked = unpack_bayer(sample.input, Cfa::bayer());
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
            const auto c = static_cast<std::size_t>(Cfa::bayer().color_at(y, x));
            ASSERT_EQ(unpacked.data()[y * 32 + x], pair.ground_truth.at(0, c, y, x));
        }
}

TEST(ShortExposure, NoiseVarianceMatchesModel) {
    // Constant patch: 1000 x 1000 sites at normalised level 0.5, ratio 100.
    const std::size_t n = 1000;
    const float c = static_cast<float>(std::round(0.5 * kRange) / kRange);
    const auto raw = mosaic(Tensor<float>({1, 3, n, n}, c), Cfa::bayer());
    const NoiseModel model{2e-5, 2e-4};
    Rng rng(2);
    const auto s = simulate_short_exposure(raw, 100.0, model, rng);
    const auto x = normalize_black_level<double>(s);
    double mean = 0;
    for (double v : x.data()) mean += v;
    mean /= double(x.numel());
    double var = 0;
    for (double v : x.data()) var += (v - mean) * (v - mean);
    var /= double(x.numel() - 1);
    const double signal = double(c) / 100.0;
    const double expected = model.shot * signal + model.read_sigma * model.read_sigma + 1.0 / (12 * kRange * kRange);
    EXPECT_NEAR(mean, signal, 1e-6);
    EXPECT_NEAR(var / expected, 1.0, 0.1);
}

TEST(ScenePair, RatiosComeFromTheFixedSet) {
    std::set<double> seen;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto p = make_scene_pair(seed, 16, Cfa::bayer(), NoiseModel{});
        seen.insert(p.raw_short.exposure_ratio);
    }
    EXPECT_EQ(seen, (std::set<double>{100.0, 250.0, 300.0}));
}

TEST(ScenePair, HdrHighlightStaysBrightInShortExposure) {
    Tensor<float> mask;
    const auto p = make_hdr_pair(9, 48, Cfa::bayer(), 100.0, 0.9, NoiseModel::none(), &mask);
    ASSERT_EQ(mask.shape(), (Shape{48, 48}));
    const auto x = normalize_black_level<double>(p.raw_short);
    double sum = 0, count = 0;
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        if (mask.data()[i] > 0.5f) {
            sum += x.data()[i];
            count += 1;
        }
    }
    ASSERT_GT(count, 0);
    EXPECT_NEAR(sum / count, 0.9, 1e-3);
}

TEST(Manifest, ParsesEntriesAndComments) {
    const auto dir = scratch("parse");
    for (const char* f : {"a.mcnt", "a.meta", "a.t.mcnt", "b.mcnt", "b.meta", "b.t.mcnt", "c.mcnt", "c.meta", "c.t.mcnt"})
        write_text(dir / f, "x");
    write_text(dir / "m.txt",
               "# comment\n"
               "a.mcnt;a.meta;a.t.mcnt;300\n"
               "\n"
               "b.mcnt ; b.meta ; b.t.mcnt ; 100.5\n" +
                   (dir / "c.mcnt").string() + ";c.meta;c.t.mcnt;1\n");
    const auto m = load_dataset(dir / "m.txt");
    ASSERT_EQ(m.entries.size(), 3u);
    EXPECT_EQ(m.entries[0].ratio, 300.0);
    EXPECT_EQ(m.entries[1].ratio, 100.5);
    EXPECT_EQ(m.entries[0].input, dir / "a.mcnt");
    EXPECT_EQ(m.entries[2].input, dir / "c.mcnt");
    fs::remove_all(dir);
}

TEST(Manifest, DistinctErrors) {
    const auto dir = scratch("errors");
    for (const char* f : {"a.mcnt", "a.meta"}) write_text(dir / f, "x");
    auto kind_of = [&](const std::string& text) {
        write_text(dir / "m.txt", text);
        try {
            load_dataset(dir / "m.txt");
        } catch (const DatasetError& e) {
            return std::pair{e.kind(), std::string(e.what())};
        }
        return std::pair{DatasetError::Kind::MissingFile, std::string("no error")};
    };
    const auto missing = kind_of("a.mcnt;a.meta;gone.mcnt;300\n");
    EXPECT_EQ(missing.first, DatasetError::Kind::MissingFile);
    EXPECT_NE(missing.second.find("gone.mcnt"), std::string::npos);
    EXPECT_EQ(kind_of("a.mcnt;a.meta;300\n").first, DatasetError::Kind::MalformedLine);
    EXPECT_EQ(kind_of("a.mcnt;a.meta;a.meta;abc\n").first, DatasetError::Kind::MalformedLine);
    EXPECT_EQ(kind_of("a.mcnt;a.meta;a.meta;0.5\n").first, DatasetError::Kind::InvalidRatio);
    EXPECT_THROW(load_dataset(dir / "none.txt"), DatasetError);
    fs::remove_all(dir);
}

TEST(SynthDataset, RegenerationIsByteIdenticalAndLoadable) {
    const auto a = scratch("regen_a"), b = scratch("regen_b");
    SynthOptions opt;
    opt.count = 3;
    opt.size = 32;
    opt.seed = 12;
    const auto ma = write_synthetic_dataset(a, opt);
    const auto mb = write_synthetic_dataset(b, opt);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        ++files;
        EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
    }
    EXPECT_EQ(files, 1u + 3 * 5);
    const auto manifest = load_dataset(ma);
    ASSERT_EQ(manifest.entries.size(), 3u);
    const auto samples = load_training_samples(manifest);
    EXPECT_EQ(samples[0].input.shape(), (Shape{1, 4, 16, 16}));
    EXPECT_EQ(samples[0].target.shape(), (Shape{1, 3, 32, 32}));
    EXPECT_EQ(samples[0].id, "scene_000");
    fs::remove_all(a);
    fs::remove_all(b);
    (void)mb;
}
