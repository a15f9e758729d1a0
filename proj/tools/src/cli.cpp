#include "mcn_cli/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "mcn/config_file.hpp"
#include "mcn/error.hpp"
#include "mcn/image_io.hpp"
#include "mcn/network.hpp"
#include "mcn/raw_pipeline.hpp"
#include "mcn/synth.hpp"
#include "mcn/tensor_io.hpp"
#include "mcn/training.hpp"

namespace mcn::cli {

namespace fs = std::filesystem;

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw CliError(kValidation, message);
}

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("MCN_SEED");
    if (!v || !*v) return std::nullopt;
    try {
        return static_cast<std::uint64_t>(parse_int(v, "MCN_SEED"));
    } catch (const ConfigError& e) {
        throw CliError(kValidation, e.what());
    }
}

void validate(const Command& cmd) {
    if (const auto* a = std::get_if<TrainArgs>(&cmd)) {
        if (a->epochs) require(*a->epochs >= 1, "--epochs must be at least 1");
        if (a->batch) require(*a->batch >= 1, "--batch must be at least 1");
        if (a->sgns) require(*a->sgns >= 1, "--sgns must be at least 1");
        if (a->width_divisor) require(*a->width_divisor >= 1, "--width-divisor must be at least 1");
        if (a->lr_initial) require(*a->lr_initial > 0.0, "--lr must be positive");
        if (a->lr_late) require(*a->lr_late > 0.0, "--lr-late must be positive");
        if (a->fusion) require(*a->fusion == "residual" || *a->fusion == "dense", "--fusion must be residual or dense");
    } else if (const auto* a = std::get_if<EnhanceArgs>(&cmd)) {
        if (a->ratio) require(*a->ratio >= 1.0, "--ratio must be >= 1");
        require(!(a->beta && a->beta_auto), "--beta and --beta-auto are mutually exclusive");
        require(a->r > 0.0, "--r must be positive");
        require(a->alpha > 0.0 && a->alpha < 1.0, "--alpha must lie in (0, 1)");
        require(a->bypass_network || a->checkpoint, "--checkpoint is required unless --bypass-network is given");
    } else if (const auto* a = std::get_if<RimefCurveArgs>(&cmd)) {
        require(a->ratio >= 1.0, "--ratio must be >= 1");
        require(a->r > 0.0, "--r must be positive");
        require(a->alpha > 0.0 && a->alpha < 1.0, "--alpha must lie in (0, 1)");
        require(a->samples >= 2, "--samples must be at least 2");
        if (a->beta) {
            IlluminationParams p{a->r, a->alpha, *a->beta, a->ratio};
            try {
                p.validate();
            } catch (const ParameterError& e) {
                throw CliError(kValidation, e.what());
            }
        }
    } else if (const auto* a = std::get_if<SynthArgs>(&cmd)) {
        require(a->count >= 1, "--count must be at least 1");
        require(a->cfa == "bayer" || a->cfa == "xtrans", "--cfa must be bayer or xtrans");
        require(a->size > 0 && a->size % (a->cfa == "bayer" ? 4 : 12) == 0,
                "--size must be a positive multiple of " + std::string(a->cfa == "bayer" ? "4" : "12"));
        require(a->shot >= 0.0 && a->read >= 0.0, "noise parameters must be non-negative");
        require(a->ratio == 0.0 || a->ratio >= 1.0, "--ratio must be >= 1");
        require(a->highlight > 0.0 && a->highlight <= 1.0, "--highlight must lie in (0, 1]");
    }
}

std::ostream& open_or(const std::optional<std::string>& path, std::ofstream& file, std::ostream& fallback) {
    if (!path) return fallback;
    file.open(*path, std::ios::binary);
    if (!file) throw IoError("cannot open '" + *path + "' for writing");
    return file;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

McnModel<float> load_model(const std::string& path) {
    const Checkpoint ckpt = Checkpoint::load(path);
    McnModel<float> model(config_from_checkpoint(ckpt));
    model.load(ckpt);
    return model;
}

int run_train(const TrainArgs& a, std::ostream& out) {
    const fs::path config_path(a.config);
    const ConfigFile file = ConfigFile::load(config_path);
    TrainConfig cfg = TrainConfig::from_config(file);
    if (const auto s = env_seed()) cfg.seed = *s;
    if (a.seed) cfg.seed = *a.seed;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.steps) cfg.steps = *a.steps;
    if (a.crop) cfg.crop = *a.crop;
    if (a.batch) cfg.batch = *a.batch;
    if (a.lr_initial) cfg.lr_initial = *a.lr_initial;
    if (a.lr_late) cfg.lr_late = *a.lr_late;
    if (a.sgns || a.fusion || a.width_divisor) {
        const std::size_t n = a.sgns.value_or(cfg.model.num_sgns);
        const FusionKind kind = a.fusion ? parse_fusion(*a.fusion) : cfg.model.fusion.kind;
        const bool back = cfg.model.back_connection;
        cfg.width_divisor = a.width_divisor.value_or(cfg.width_divisor);
        cfg.model = McnConfig::make(n, kind, cfg.width_divisor, cfg.model.cfa, cfg.seed);
        cfg.model.back_connection = back;
    }
    cfg.model.seed = cfg.seed;
    cfg.validate();

    const fs::path base = config_path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? base / p : fs::path(p); };
    fs::path manifest;
    if (a.manifest) {
        manifest = *a.manifest;
    } else if (const auto m = file.get("data", "manifest")) {
        manifest = resolve(*m);
    } else {
        throw CliError(kValidation, "no dataset: pass --manifest or set [data] manifest in the config");
    }
    fs::path out_dir = ".";
    if (a.out_dir) {
        out_dir = *a.out_dir;
    } else if (const auto o = file.get("data", "output_dir")) {
        out_dir = resolve(*o);
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

    const auto samples = load_training_samples(load_dataset(manifest));
    std::unique_ptr<Checkpoint> resume;
    if (a.resume) resume = std::make_unique<Checkpoint>(Checkpoint::load(*a.resume));

    const fs::path log_path = out_dir / "train_log.csv";
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open '" + log_path.string() + "'");
    if (!resume) write_log_header(log);

    TrainHooks hooks;
    hooks.on_log = [&](const LogRow& row) { write_log_row(log, row); };
    hooks.on_checkpoint = [&](const Checkpoint& ckpt, std::size_t step, bool final) {
        ckpt.save(final ? out_dir / "model.mcnc" : out_dir / ("checkpoint_step" + std::to_string(step) + ".mcnc"));
    };
    hooks.on_abort = [&](const Checkpoint& ckpt, const std::string&) {
        log.flush();
        ckpt.save(out_dir / "abort_dump.mcnc");
    };
    const auto result = train_loop(cfg, samples, hooks, resume.get());
    log.flush();
    if (!log) throw IoError("failed writing '" + log_path.string() + "'");
    out << "trained " << result.steps << " steps; checkpoint " << (out_dir / "model.mcnc").string() << "\n";
    if (!result.log.empty()) out << "final loss " << fmt(result.log.back().loss) << "\n";
    return kOk;
}

int run_enhance(const EnhanceArgs& a, std::ostream& out) {
    const RawFrame frame = load_raw_frame(a.input, a.meta);
    const double ratio = a.ratio.value_or(frame.exposure_ratio);
    if (!(ratio >= 1.0)) throw CliError(kValidation, "exposure ratio must be >= 1");
    const double beta = a.beta_auto ? 1.0 / ratio : a.beta.value_or(1.0);
    const IlluminationParams params{a.r, a.alpha, beta, ratio};
    params.validate();
    const Tensor<float> packed = preprocess_frame(frame, params);

    Tensor<float> rgb;
    if (a.bypass_network) {
        rgb = render_packed(packed, frame.cfa);
    } else {
        const McnModel<float> model = load_model(*a.checkpoint);
        if (model.config().in_channels() != frame.cfa.packed_channels()) {
            throw CliError(kValidation, "checkpoint expects " + std::to_string(model.config().in_channels()) +
                                            "-channel input but the frame packs to " +
                                            std::to_string(frame.cfa.packed_channels()) + " channels");
        }
        rgb = run_inference(model, packed).back_output;
    }
    save_mcnt(a.out + ".mcnt", rgb);
    save_ppm(a.out + ".ppm", rgb);
    out << "wrote " << a.out << ".mcnt and " << a.out << ".ppm (beta " << fmt(params.effective_beta()) << ", ratio "
        << fmt(ratio) << ")\n";
    return kOk;
}

int run_eval(const EvalArgs& a, std::ostream& out) {
    const McnModel<float> model = load_model(a.checkpoint);
    const auto samples = load_training_samples(load_dataset(a.manifest));
    for (const auto& s : samples) {
        if (s.input.dim(1) != model.config().in_channels()) {
            throw CliError(kValidation, "checkpoint/dataset mismatch: sample '" + s.id + "' has " +
                                            std::to_string(s.input.dim(1)) + " packed channels");
        }
    }
    std::function<void(const TrainSample&, const McnOutputs<float>&)> dump;
    if (a.dump_features) {
        const fs::path dir(*a.dump_features);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
        dump = [dir, n = model.num_sgns()](const TrainSample& s, const McnOutputs<float>& o) {
            for (std::size_t p = 0; p < o.features.size(); ++p) {
                const std::string pass = p == 0 ? "sgn1_plain" : p < n ? "sgn" + std::to_string(p + 1) : "sgn1_back";
                for (std::size_t j = 0; j < o.features[p].size(); ++j) {
                    save_mcnt(dir / (s.id + "." + pass + ".block" + std::to_string(j + 1) + ".mcnt"), o.features[p][j]);
                }
            }
        };
    }
    const auto reports = evaluate_heads(model, samples, dump);
    const MetricsReport* report = nullptr;
    try {
        report = &reports.report(a.head);
    } catch (const ParameterError&) {
        std::string heads;
        for (const auto& h : reports.heads) heads += " " + h;
        throw CliError(kValidation, "unknown --head '" + a.head + "'; available:" + heads);
    }
    std::ofstream file;
    std::ostream& dst = open_or(a.out, file, out);
    report->write_csv(dst);
    if (!dst) throw IoError("failed writing metrics");
    return kOk;
}

int run_rimef_curve(const RimefCurveArgs& a, std::ostream& out) {
    const IlluminationParams params{a.r, a.alpha, a.beta.value_or(1.0 / a.ratio), a.ratio};
    params.validate();
    std::ofstream file;
    std::ostream& dst = open_or(a.out, file, out);
    dst << "x,m_f,M\n";
    for (std::size_t i = 0; i < a.samples; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(a.samples - 1);
        dst << fmt(x) << ',' << fmt(illumination_map(x, a.r, a.alpha)) << ',' << fmt(rimef_gain(x, params)) << '\n';
    }
    if (!dst) throw IoError("failed writing curve");
    return kOk;
}

int run_synth(const SynthArgs& a, std::ostream& out) {
    SynthOptions o;
    o.count = a.count;
    o.size = a.size;
    o.cfa = a.cfa == "bayer" ? Cfa::bayer() : Cfa::xtrans();
    o.noise = NoiseModel{a.shot, a.read};
    o.seed = a.seed ? *a.seed : env_seed().value_or(0);
    o.previews = a.previews;
    o.ratio = a.ratio;
    o.hdr = a.hdr;
    o.highlight_level = a.highlight;
    const auto manifest = write_synthetic_dataset(a.out_dir, o);
    out << "wrote " << a.count << " scene pairs; manifest " << manifest.string() << "\n";
    return kOk;
}

}  // namespace

Command parse_args(const std::vector<std::string>& args) {
    CLI::App app{"Low-light raw enhancement with multi-granulation cooperative networks", "mcn"};
    app.require_subcommand(1, 1);
    app.allow_extras(false);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model from a config file and dataset manifest");
    t->add_option("--config", train.config, "Config file ([model], [train], [loss], [data] sections)")->required();
    t->add_option("--manifest", train.manifest, "Dataset manifest (overrides [data] manifest)");
    t->add_option("--out-dir", train.out_dir, "Directory for model.mcnc, checkpoints and train_log.csv");
    t->add_option("--resume", train.resume, "Resume from a training checkpoint");
    t->add_option("--epochs", train.epochs);
    t->add_option("--steps", train.steps, "Stop after this many optimisation steps");
    t->add_option("--crop", train.crop, "Training crop in raw pixels");
    t->add_option("--batch", train.batch);
    t->add_option("--sgns", train.sgns, "Number of SGNs");
    t->add_option("--width-divisor", train.width_divisor, "Divide reference block widths by this");
    t->add_option("--fusion", train.fusion, "residual or dense");
    t->add_option("--lr", train.lr_initial, "Initial learning rate");
    t->add_option("--lr-late", train.lr_late, "Learning rate after the switch epoch");
    t->add_option("--seed", train.seed, "Seed (overrides MCN_SEED and the config)");

    EnhanceArgs enhance;
    auto* e = app.add_subcommand("enhance", "Amplify a raw frame and restore it with a trained model");
    e->add_option("--input", enhance.input, "Raw frame (MCNT, u16)")->required();
    e->add_option("--meta", enhance.meta, "Sidecar metadata file")->required();
    e->add_option("--out", enhance.out, "Output prefix; writes <out>.mcnt and <out>.ppm")->required();
    e->add_option("--checkpoint", enhance.checkpoint);
    e->add_option("--ratio", enhance.ratio, "Exposure ratio (default: frame metadata)");
    e->add_option("--beta", enhance.beta, "RIMEF lower bound (default 1)");
    e->add_flag("--beta-auto", enhance.beta_auto, "Use beta = 1 / ratio");
    e->add_option("--r", enhance.r);
    e->add_option("--alpha", enhance.alpha);
    e->add_flag("--bypass-network", enhance.bypass_network, "Render the amplified packed input without the network");

    EvalArgs eval;
    auto* v = app.add_subcommand("eval", "Score a checkpoint on a dataset manifest");
    v->add_option("--checkpoint", eval.checkpoint)->required();
    v->add_option("--manifest", eval.manifest)->required();
    v->add_option("--out", eval.out, "Metrics CSV (default stdout)");
    v->add_option("--dump-features", eval.dump_features, "Directory for per-block feature MCNT dumps");
    v->add_option("--head", eval.head, "Output to score: sgn1_back, sgn1_plain or sgn<i>");

    RimefCurveArgs curve;
    auto* c = app.add_subcommand("rimef-curve", "Export the RIMEF curve as CSV (x, m_f, M)");
    c->add_option("--r", curve.r);
    c->add_option("--alpha", curve.alpha);
    c->add_option("--beta", curve.beta, "Lower bound (default 1 / ratio)");
    c->add_option("--ratio", curve.ratio);
    c->add_option("--samples", curve.samples);
    c->add_option("--out", curve.out, "CSV path (default stdout)");

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic paired dataset");
    s->add_option("--out", synth.out_dir, "Output directory")->required();
    s->add_option("--count", synth.count);
    s->add_option("--size", synth.size, "Square image size in pixels");
    s->add_option("--cfa", synth.cfa, "bayer or xtrans");
    s->add_option("--seed", synth.seed, "Seed (overrides MCN_SEED)");
    s->add_option("--shot", synth.shot, "Shot-noise variance per unit signal");
    s->add_option("--read", synth.read, "Read-noise standard deviation");
    s->add_option("--ratio", synth.ratio, "Fixed exposure ratio (default: drawn from 100, 250, 300)");
    s->add_flag("--hdr", synth.hdr, "Scenes with a light source that stays bright in the short exposure");
    s->add_option("--highlight", synth.highlight, "Short-exposure level of the HDR light source");
    bool no_preview = false;
    s->add_flag("--no-preview", no_preview, "Skip P6 previews");

    if (!args.empty() && !args.front().empty() && args.front().front() != '-') {
        bool known = false;
        for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == args.front();
        if (!known) throw CliError(kUsage, "unknown subcommand '" + args.front() + "'\n" + app.help());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        throw CliError(kOk, app.help());
    } catch (const CLI::CallForAllHelp&) {
        throw CliError(kOk, app.help("", CLI::AppFormatMode::All));
    } catch (const CLI::ParseError& err) {
        std::string msg = err.what();
        if (app.get_subcommands().size() == 1) msg += "\n" + app.get_subcommands().front()->help();
        throw CliError(kUsage, msg);
    }

    Command cmd;
    if (t->parsed()) {
        cmd = train;
    } else if (e->parsed()) {
        cmd = enhance;
    } else if (v->parsed()) {
        cmd = eval;
    } else if (c->parsed()) {
        cmd = curve;
    } else {
        synth.previews = !no_preview;
        cmd = synth;
    }
    validate(cmd);
    return cmd;
}

int execute(const Command& cmd, std::ostream& out, std::ostream& err) {
    try {
        return std::visit(
            [&](const auto& a) -> int {
                using A = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<A, TrainArgs>) return run_train(a, out);
                else if constexpr (std::is_same_v<A, EnhanceArgs>) return run_enhance(a, out);
                else if constexpr (std::is_same_v<A, EvalArgs>) return run_eval(a, out);
                else if constexpr (std::is_same_v<A, RimefCurveArgs>) return run_rimef_curve(a, out);
                else return run_synth(a, out);
            },
            cmd);
    } catch (const CliError& e) {
        err << "error: " << e.what() << "\n";
        return e.code();
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << "\n";
        return kIo;
    } catch (const Error& e) {
        err << "invalid input: " << e.what() << "\n";
        return kValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Command cmd;
    try {
        cmd = parse_args(args);
    } catch (const CliError& e) {
        (e.code() == kOk ? out : err) << e.what() << (e.code() == kOk ? "" : "\n");
        return e.code();
    }
    return execute(cmd, out, err);
}

}  // namespace mcn::cli
