#include <iostream>

#include "tgsr/cli.hpp"

int main(int argc, char** argv) { return tgsr::run_cli(argc, argv, std::cout, std::cerr); }
