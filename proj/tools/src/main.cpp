#include <iostream>
#include <string>
#include <vector>

#include "mcn_cli/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mcn::cli::run(args, std::cout, std::cerr);
}
