#include "mbsts/cli.hpp"
#include "mbsts/sources_https.hpp"

#include <iostream>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return mbsts::cli::run_cli(args, std::cout, std::cerr, mbsts::https_fetcher());
}
