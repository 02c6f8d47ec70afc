#include <iostream>

#include "tpx/cli.hpp"

int main(int argc, char** argv) { return tpx::run_cli(argc, argv, std::cout, std::cerr); }
