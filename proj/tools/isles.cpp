#include <iostream>

#include "isles/cli.hpp"

int main(int argc, char** argv) {
    return isles::cli::run(argc, argv, std::cout, std::cerr);
}
