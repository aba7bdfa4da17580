#include <iostream>
#include <string>
#include <vector>

#include "dsrlab/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dsrlab::run(args, std::cout, std::cerr);
}
