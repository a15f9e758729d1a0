#pragma once

// Command-line front end: parsing into typed commands and executing them.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mcn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kIo = 3, kNumeric = 4 };

class CliError : public std::runtime_error {
public:
    CliError(int code, const std::string& message) : std::runtime_error(message), code_(code) {}
    int code() const { return code_; }

private:
    int code_;
};

struct TrainArgs {
    std::string config;
    std::optional<std::string> manifest;
    std::optional<std::string> out_dir;
    std::optional<std::string> resume;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> steps;
    std::optional<std::size_t> crop;
    std::optional<std::size_t> batch;
    std::optional<std::size_t> sgns;
    std::optional<std::size_t> width_divisor;
    std::optional<std::string> fusion;
    std::optional<double> lr_initial;
    std::optional<double> lr_late;
    std::optional<std::uint64_t> seed;
};

struct EnhanceArgs {
    std::string input;
    std::string meta;
    std::string out;  // writes <out>.mcnt and <out>.ppm
    std::optional<std::string> checkpoint;
    std::optional<double> ratio;  // defaults to the frame's exposure ratio
    std::optional<double> beta;   // default 1
    bool beta_auto = false;       // beta = 1 / ratio
    double r = 1.0;
    double alpha = 1e-6;
    bool bypass_network = false;
};

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::optional<std::string> out;  // stdout when absent
    std::optional<std::string> dump_features;
    std::string head = "sgn1_back";
};

struct RimefCurveArgs {
    double r = 1.0;
    double alpha = 1e-6;
    std::optional<double> beta;  // default 1 / ratio
    double ratio = 300.0;
    std::size_t samples = 1024;
    std::optional<std::string> out;  // stdout when absent
};

struct SynthArgs {
    std::string out_dir;
    std::size_t count = 8;
    std::size_t size = 64;
    std::string cfa = "bayer";
    std::optional<std::uint64_t> seed;
    double shot = 2e-5;
    double read = 2e-4;
    bool previews = true;
    bool hdr = false;
    double ratio = 0.0;  // 0 draws from {100, 250, 300}
    double highlight = 0.9;
};

using Command = std::variant<TrainArgs, EnhanceArgs, EvalArgs, RimefCurveArgs, SynthArgs>;

/// Parses argv (without the program name). Throws CliError with kUsage for
/// unknown subcommands or flags, missing required flags and unparseable
/// numbers, kValidation for out-of-range values, and kOk carrying the help
/// text for --help.
Command parse_args(const std::vector<std::string>& args);

/// Runs a parsed command. Library errors map to exit codes; messages go to `err`.
int execute(const Command& cmd, std::ostream& out, std::ostream& err);

/// parse_args + execute with error reporting.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mcn::cli
