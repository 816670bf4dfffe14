#include <iostream>
#include <string>
#include <vector>

#include "pathsearch/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return pathsearch::cli::run(args, std::cout, std::cerr);
}
