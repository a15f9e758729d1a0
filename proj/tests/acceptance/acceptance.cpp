// Acceptance suite. Runs the ten end-to-end criteria and prints one
// PASS/FAIL line each. With arguments, only the listed criteria run
// (`mcn_acceptance 3 5`). Exit status is non-zero if any selected criterion
// fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mcn/autograd.hpp"
#include "mcn/error.hpp"
#include "mcn/losses.hpp"
#include "mcn/metrics.hpp"
#include "mcn/network.hpp"
#include "mcn/ops.hpp"
#include "mcn/raw_pipeline.hpp"
#include "mcn/rng.hpp"
#include "mcn/synth.hpp"
#include "mcn/tensor_io.hpp"
#include "mcn/training.hpp"
#include "mcn_cli/cli.hpp"
#include "oracles.hpp"

using namespace mcn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Working files go below the current directory (the build tree under ctest).
fs::path scratch(const std::string& name) {
    const fs::path dir = fs::current_path() / "acceptance_scratch" / name;
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

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != cli::kOk) std::cerr << err.str();
    return code;
}

struct RimefCase {
    double r;
    double alpha;
};

const RimefCase kRimefCases[] = {{1, 1e-6}, {5, 1e-6}, {10, 1e-6}, {1, 0.1}, {5, 0.1}, {10, 0.1}};
constexpr std::size_t kGridPoints = 10000;
constexpr double kRatio = 300.0;

double grid_x(std::size_t i) { return static_cast<double>(i) / static_cast<double>(kGridPoints - 1); }

Outcome rimef_golden() {
    double worst_gain = 0.0, worst_map = 0.0;
    for (const auto& c : kRimefCases) {
        const IlluminationParams p{c.r, c.alpha, 1.0 / kRatio, kRatio};
        const oracle::HighPrecision r(c.r), alpha(c.alpha), beta = oracle::HighPrecision(1) / kRatio, ratio(kRatio);
        for (std::size_t i = 0; i < kGridPoints; ++i) {
            const oracle::HighPrecision x(grid_x(i));
            const double want_map = static_cast<double>(oracle::illumination_map_hp(x, r, alpha));
            const double want_gain = static_cast<double>(oracle::rimef_gain_hp(x, r, alpha, beta, ratio));
            const double got_map = illumination_map(grid_x(i), c.r, c.alpha);
            const double got_gain = rimef_gain(grid_x(i), p);
            worst_gain = std::max(worst_gain, std::abs(got_gain - want_gain) / std::abs(want_gain));
            // m crosses zero at x = 1 - alpha; relative error is measured
            // against max(|m|, tiny) there.
            worst_map = std::max(worst_map, std::abs(got_map - want_map) / std::max(std::abs(want_map), 1e-300));
        }
    }

    // Timed pass over the same 60,000 points.
    const auto start = std::chrono::steady_clock::now();
    double sink = 0.0;
    for (const auto& c : kRimefCases) {
        const IlluminationParams p{c.r, c.alpha, 1.0 / kRatio, kRatio};
        for (std::size_t i = 0; i < kGridPoints; ++i) sink += rimef_gain(grid_x(i), p);
    }
    const double elapsed = seconds_since(start);

    const bool pass = worst_gain < 1e-9 && worst_map < 1e-9 && elapsed < 1.0 && std::isfinite(sink);
    return {pass, "max rel err gain " + fmt(worst_gain, 3) + ", map " + fmt(worst_map, 3) + "; " +
                      std::to_string(std::size(kRimefCases) * kGridPoints) + " points in " + fmt(elapsed * 1e3, 3) +
                      " ms"};
}

Outcome rimef_structure() {
    bool ok = true;
    std::string notes;
    std::size_t monotone_cases = 0;
    for (const auto& c : kRimefCases) {
        if (illumination_map(0.0, c.r, c.alpha) != 1.0) {
            ok = false;
            notes += " m(0)!=1 at r=" + fmt(c.r) + ",alpha=" + fmt(c.alpha) + ";";
        }
        // m is strictly decreasing on [0, 1] exactly when r (1 + alpha) ln(1 + alpha) < 1.
        const bool decreasing_expected = c.r * (1.0 + c.alpha) * std::log1p(c.alpha) < 1.0;
        bool decreasing = true;
        for (std::size_t i = 1; i < kGridPoints; ++i) {
            if (!(illumination_map(grid_x(i), c.r, c.alpha) < illumination_map(grid_x(i - 1), c.r, c.alpha))) {
                decreasing = false;
                break;
            }
        }
        if (decreasing_expected) {
            ++monotone_cases;
            if (!decreasing) {
                ok = false;
                notes += " not decreasing at r=" + fmt(c.r) + ",alpha=" + fmt(c.alpha) + ";";
            }
        } else if (decreasing) {
            ok = false;
            notes += " expected an upturn at r=" + fmt(c.r) + ",alpha=" + fmt(c.alpha) + ";";
        } else {
            notes += " r=" + fmt(c.r) + ",alpha=" + fmt(c.alpha) + " rises near x=1 as predicted;";
        }

        for (double beta : {1.0 / kRatio, 0.01, 0.1, 0.5, 1.0}) {
            const IlluminationParams p{c.r, c.alpha, beta, kRatio};
            for (std::size_t i = 0; i < kGridPoints; ++i) {
                const double m = rimef_gain(grid_x(i), p);
                const bool in_range = m >= beta * kRatio * (1 - 1e-15) && m <= kRatio && m >= 1.0;
                const bool linear = beta != 1.0 || m == kRatio;
                if (!in_range || !linear) {
                    ok = false;
                    notes += " gain out of range at beta=" + fmt(beta) + ";";
                    break;
                }
            }
        }
    }
    return {ok, "strictly decreasing for " + std::to_string(monotone_cases) + " of 6 (r, alpha);" + notes};
}

Outcome gradient_suite() {
    const auto start = std::chrono::steady_clock::now();
    using oracle::random_tensor;
    const Shape s{2, 4, 8, 8};
    const double eps = 1e-6;
    const auto x = random_tensor<double>(s, 900);
    const auto other = random_tensor<double>(s, 901);
    const auto mix = random_tensor<double>(s, 902, 0.5, 1.5);
    // Elements get unequal sensitivities through a random lrelu branch and
    // the neighbour-coupled TV term, so misrouted gradients show up.
    auto reduce = [](const Tensor<double>& y) {
        const auto m = random_tensor<double>(y.shape(), 903);
        const Tensor<double> parts[2] = {y, m};
        const Tensor<double> terms[2] = {sum(lrelu(weighted_sum<double>(parts, std::vector<double>{1.0, 3.0}), 0.2)),
                                         total_variation(y)};
        return weighted_sum<double>(terms, std::vector<double>{1.0, 1.0});
    };
    const auto w3 = random_tensor<double>({3, 4, 3, 3}, 904);
    const auto wt = random_tensor<double>({4, 2, 2, 2}, 905);
    const auto b3 = random_tensor<double>({3}, 906);
    const auto b2 = random_tensor<double>({2}, 907);

    using Graph = std::function<Tensor<double>(const Tensor<double>&)>;
    struct Check {
        const char* name;
        Graph f;
        const Tensor<double>* at;
        double eps;
    };
    const std::vector<Check> checks = {
        {"conv2d/input", [&](const Tensor<double>& in) { return reduce(conv2d(in, w3, b3, 1, 1)); }, &x, eps},
        {"conv2d/stride2", [&](const Tensor<double>& in) { return reduce(conv2d(in, w3, b3, 2, 1)); }, &x, eps},
        {"conv2d/weight", [&](const Tensor<double>& w) { return reduce(conv2d(x, w, b3, 1, 1)); }, &w3, eps},
        {"conv2d/bias", [&](const Tensor<double>& b) { return reduce(conv2d(x, w3, b, 1, 1)); }, &b3, eps},
        {"tconv2d/input", [&](const Tensor<double>& in) { return reduce(tconv2d(in, wt, b2, 2)); }, &x, eps},
        {"tconv2d/weight", [&](const Tensor<double>& w) { return reduce(tconv2d(x, w, b2, 2)); }, &wt, eps},
        {"tconv2d/bias", [&](const Tensor<double>& b) { return reduce(tconv2d(x, wt, b, 2)); }, &b2, eps},
        {"lrelu", [&](const Tensor<double>& in) { return reduce(lrelu(in, 0.2)); }, &x, eps},
        {"max_pool2", [&](const Tensor<double>& in) { return reduce(max_pool2(in)); }, &x, eps},
        {"concat_channels",
         [&](const Tensor<double>& in) {
             const Tensor<double> parts[3] = {other, in, in};
             return reduce(concat_channels<double>(parts));
         },
         &x, eps},
        {"depth_to_space", [&](const Tensor<double>& in) { return reduce(depth_to_space(in, 2)); }, &x, eps},
        {"space_to_depth", [&](const Tensor<double>& in) { return reduce(space_to_depth(in, 2)); }, &x, eps},
        {"add", [&](const Tensor<double>& in) { return reduce(add(in, other)); }, &x, eps},
        {"sub", [&](const Tensor<double>& in) { return reduce(sub(other, in)); }, &x, eps},
        {"scale", [&](const Tensor<double>& in) { return reduce(scale(in, -2.5)); }, &x, eps},
        {"weighted_sum",
         [&](const Tensor<double>& in) {
             const Tensor<double> parts[3] = {in, other, in};
             return reduce(weighted_sum<double>(parts, std::vector<double>{0.5, 2.0, -1.0}));
         },
         &x, eps},
        {"abs", [&](const Tensor<double>& in) { return reduce(abs(in)); }, &x, eps},
        {"sum", [&](const Tensor<double>& in) { return sum(add(scale(in, 2.0), mix)); }, &x, eps},
        {"mean", [&](const Tensor<double>& in) { return mean(add(in, mix)); }, &x, eps},
        {"l1_mean", [&](const Tensor<double>& in) { return l1_mean(in, other); }, &x, eps},
        {"total_variation", [&](const Tensor<double>& in) { return reduce(in); }, &x, eps},
    };

    double worst = 0.0;
    std::string worst_name;
    for (const auto& c : checks) {
        const double err = check_gradients<double>(c.f, *c.at, c.eps);
        if (err > worst) {
            worst = err;
            worst_name = c.name;
        }
    }

    // Composite training loss through a width-divisor-8 RMCN-2, with respect
    // to the packed input.
    const McnModel<double> model(McnConfig::make(2, FusionKind::Residual, 8, CfaKind::Bayer, 3));
    const auto packed = random_tensor<double>({1, 4, 16, 16}, 14, 0, 1);
    const auto target = random_tensor<double>({1, 3, 32, 32}, 15, 0, 1);
    const double composite = check_gradients<double>(
        [&](const Tensor<double>& in) { return multi_granulation_loss(mcn_forward(model, in), target, {}).total; },
        packed, 1e-5);

    const double elapsed = seconds_since(start);
    const bool pass = worst < 1e-4 && composite < 1e-4 && elapsed < 300.0;
    return {pass, std::to_string(checks.size()) + " operator checks, worst " + fmt(worst, 3) + " (" + worst_name +
                      "); composite loss " + fmt(composite, 3) + "; " + fmt(elapsed, 3) + " s"};
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

Outcome lossless_transforms() {
    Rng rng(77);
    std::size_t failures = 0;
    const Cfa layouts[4] = {Cfa::bayer("RGGB"), Cfa::bayer("BGGR"), Cfa::bayer("GRBG"), Cfa::bayer("GBRG")};
    for (std::size_t i = 0; i < 1000; ++i) {
        const std::size_t h = 2 * (1 + rng.below(24)), w = 2 * (1 + rng.below(24));
        const auto mosaic = oracle::random_tensor<float>({h, w}, 10000 + i, 0, 1);
        const Cfa& cfa = layouts[i % 4];
        if (!bit_equal(unpack_bayer(pack_bayer(mosaic, cfa), cfa), mosaic)) ++failures;

        const std::size_t f = 2 + rng.below(2);
        const Shape deep{1 + rng.below(2), f * f * (1 + rng.below(4)), 1 + rng.below(8), 1 + rng.below(8)};
        const auto d = oracle::random_tensor<float>(deep, 20000 + i);
        if (!bit_equal(space_to_depth(depth_to_space(d, f), f), d)) ++failures;
        const Shape wide{deep[0], deep[1], deep[2] * f, deep[3] * f};
        const auto s = oracle::random_tensor<float>(wide, 30000 + i);
        if (!bit_equal(depth_to_space(space_to_depth(s, f), f), s)) ++failures;
    }
    return {failures == 0, "1000 random tensors per transform, " + std::to_string(failures) + " mismatches"};
}

Outcome parameter_counts() {
    auto count = [](std::size_t sgns, FusionKind kind, bool back) {
        McnConfig cfg = McnConfig::make(sgns, kind);
        cfg.back_connection = back;
        return count_params(McnModel<float>(cfg));
    };
    const std::size_t sgn = count_params(Sgn<float>(SgnConfig{}, "sgn1", 0));
    const std::size_t rmcn2 = count(2, FusionKind::Residual, true);
    const std::size_t rmcn3 = count(3, FusionKind::Residual, true);
    const std::size_t dmcn3 = count(3, FusionKind::Dense, true);
    const bool back_free = count(3, FusionKind::Residual, false) == rmcn3 &&
                           count(3, FusionKind::Dense, false) == dmcn3;
    auto within = [](std::size_t n, double reference) {
        return std::abs(static_cast<double>(n) - reference) <= 0.2 * reference;
    };
    const bool pass = back_free && within(sgn, 8e6) && within(rmcn2, 16e6) && within(rmcn3, 23e6) &&
                      within(dmcn3, 42e6);
    return {pass, "SGN " + std::to_string(sgn) + ", RMCN-2 " + std::to_string(rmcn2) + ", RMCN-3 " +
                      std::to_string(rmcn3) + ", DMCN-3 " + std::to_string(dmcn3) +
                      (back_free ? "; back connection adds 0" : "; back connection changes the count")};
}

Outcome overfit() {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<TrainSample> data{make_training_sample(make_scene_pair(1, 64, Cfa::bayer(), NoiseModel{}))};
    TrainConfig cfg;
    cfg.model = McnConfig::make(2, FusionKind::Residual, 8);
    cfg.width_divisor = 8;
    cfg.crop = 64;
    cfg.steps = 500;
    cfg.augment = false;
    cfg.lr_initial = 5e-3;
    cfg.lr_late = 5e-3;
    cfg.loss.lambda_s = 0.0;
    cfg.checkpoint_every = 1000000;
    const TrainResult result = train_loop(cfg, data);
    McnModel<float> model(cfg.model);
    model.load(result.checkpoint);
    const double p = psnr(run_inference(model, data[0].input).back_output, data[0].target);
    const double loss_ratio = result.log.back().loss / result.log.front().loss;
    const double elapsed = seconds_since(start);
    const bool pass = p > 30.0 && loss_ratio < 0.3 && elapsed < 600.0;
    return {pass, "back-connected PSNR " + fmt(p, 5) + " dB (needs > 30), final/first loss " + fmt(loss_ratio, 3) +
                      ", " + fmt(elapsed, 3) + " s"};
}

Outcome cooperation_trend() {
    const auto start = std::chrono::steady_clock::now();
    std::vector<TrainSample> data;
    for (std::uint64_t i = 0; i < 32; ++i) {
        data.push_back(make_training_sample(make_scene_pair(1000 + i, 64, Cfa::bayer(), NoiseModel{})));
    }
    TrainConfig cfg;
    cfg.model = McnConfig::make(3, FusionKind::Residual, 8);
    cfg.width_divisor = 8;
    cfg.crop = 64;
    cfg.steps = 2000;
    cfg.lr_initial = 3e-3;
    cfg.lr_late = 3e-4;
    cfg.lr_switch_epoch = 46;
    cfg.loss.lambda_s = 0.0;
    cfg.checkpoint_every = 1000000;
    const TrainResult result = train_loop(cfg, data);
    McnModel<float> model(cfg.model);
    model.load(result.checkpoint);
    const HeadReports heads = evaluate_heads(model, data);
    const double plain = heads.report("sgn1_plain").mean_psnr();
    const double sgn2 = heads.report("sgn2").mean_psnr();
    const double sgn3 = heads.report("sgn3").mean_psnr();
    const double back = heads.report("sgn1_back").mean_psnr();
    const bool pass = sgn3 >= sgn2 - 0.1 && back >= sgn2 - 0.1 && plain < std::min({sgn2, sgn3, back});
    return {pass, "PSNR plain " + fmt(plain, 5) + ", SGN-2 " + fmt(sgn2, 5) + ", SGN-3 " + fmt(sgn3, 5) +
                      ", back " + fmt(back, 5) + " dB; " + fmt(seconds_since(start), 3) + " s"};
}

Outcome determinism() {
    const fs::path dir = scratch("determinism");
    const std::string data = (dir / "data").string();
    if (cli({"synth", "--out", data, "--count", "8", "--size", "64", "--seed", "21", "--no-preview"}) != cli::kOk) {
        return {false, "synth failed"};
    }
    {
        std::ofstream cfg(dir / "train.ini");
        cfg << "[model]\nsgns = 3\nfusion = residual\nwidth_divisor = 8\n"
               "[train]\ncrop = 64\nepochs = 25\nlr_initial = 0.001\nlr_late = 0.0001\nlr_switch_epoch = 20\n"
               "checkpoint_every = 10\n";
    }
    auto train = [&](const std::string& run) {
        return cli({"train", "--config", (dir / "train.ini").string(), "--manifest", data + "/manifest.txt",
                    "--out-dir", (dir / run).string(), "--seed", "5"});
    };
    if (train("a") != cli::kOk || train("b") != cli::kOk) return {false, "training failed"};
    std::size_t compared = 0, differing = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        ++compared;
        if (slurp(e.path()) != slurp(dir / "b" / e.path().filename())) ++differing;
    }
    const std::string model_a = slurp(dir / "a/model.mcnc");
    const bool pass = compared >= 2 && differing == 0 && !model_a.empty();
    fs::remove_all(dir);
    return {pass, std::to_string(compared) + " output files compared, " + std::to_string(differing) + " differ"};
}

Outcome metric_examples() {
    const auto a = oracle::random_tensor<double>({3, 32, 32}, 41, 0.2, 0.8);
    Tensor<double> b(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) b.mutable_data()[i] = a.data()[i] + (i % 3 == 0 ? 0.1 : -0.1);
    const double p = psnr(a, b);
    const double s = ssim(Tensor<double>({3, 16, 16}, 0.0), Tensor<double>({3, 16, 16}, 1.0));
    const bool pass = std::abs(p - 20.0) <= 1e-6 && std::abs(s - 9.999e-5) <= 1e-6;
    return {pass, "uniform 0.1 error PSNR " + fmt(p, 12) + " dB, constant-image SSIM " + fmt(s, 6)};
}

Outcome hdr_behaviour() {
    const fs::path dir = scratch("hdr");
    Tensor<float> mask;
    const ScenePair pair = make_hdr_pair(3, 64, Cfa::bayer(), 100.0, 0.9, NoiseModel{}, &mask);
    save_raw_frame(dir / "hdr.raw.mcnt", dir / "hdr.meta", pair.raw_short);
    auto enhance = [&](const std::string& name, const std::string& beta_flag) {
        std::vector<std::string> args{"enhance", "--input", (dir / "hdr.raw.mcnt").string(), "--meta",
                                      (dir / "hdr.meta").string(), "--out", (dir / name).string(), "--bypass-network"};
        if (beta_flag == "auto") {
            args.push_back("--beta-auto");
        } else {
            args.insert(args.end(), {"--beta", beta_flag});
        }
        if (cli(args) != cli::kOk) return Tensor<float>();
        return load_mcnt(dir / (name + ".mcnt")).to_tensor();
    };
    const Tensor<float> linear = enhance("linear", "1");
    const Tensor<float> preserved = enhance("preserved", "auto");
    fs::remove_all(dir);
    if (linear.numel() == 0 || preserved.numel() == 0) return {false, "enhance failed"};

    const std::size_t h = mask.dim(0), w = mask.dim(1);
    double sum_linear = 0.0, sum_preserved = 0.0, max_preserved = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                if (mask.data()[y * w + x] == 0.0f) continue;
                ++n;
                sum_linear += linear.at(0, c, y, x);
                sum_preserved += preserved.at(0, c, y, x);
                max_preserved = std::max(max_preserved, static_cast<double>(preserved.at(0, c, y, x)));
            }
    if (n == 0) return {false, "empty highlight mask"};
    const double mean_linear = sum_linear / n, mean_preserved = sum_preserved / n;
    const bool pass = mean_linear >= 0.99 && max_preserved < 1.0;
    return {pass, "highlight mean with beta=1 " + fmt(mean_linear, 5) + ", with beta=1/ratio " +
                      fmt(mean_preserved, 5) + " (max " + fmt(max_preserved, 5) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"RIMEF golden values", rimef_golden},
        {"RIMEF structure", rimef_structure},
        {"gradient suite", gradient_suite},
        {"lossless transforms", lossless_transforms},
        {"parameter counts", parameter_counts},
        {"single-pair overfit", overfit},
        {"cooperation trend", cooperation_trend},
        {"training determinism", determinism},
        {"metric examples", metric_examples},
        {"HDR highlight handling", hdr_behaviour},
    };
    std::vector<std::size_t> selected;
    for (int i = 1; i < argc; ++i) {
        const int k = std::atoi(argv[i]);
        if (k < 1 || k > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion " << argv[i] << "\n";
            return 2;
        }
        selected.push_back(static_cast<std::size_t>(k));
    }
    if (selected.empty()) {
        for (std::size_t k = 1; k <= criteria.size(); ++k) selected.push_back(k);
    }

    bool all = true;
    for (std::size_t k : selected) {
        const auto& [name, run] = criteria[k - 1];
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::printf("criterion %zu %s: %s  [%s]\n", k, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
