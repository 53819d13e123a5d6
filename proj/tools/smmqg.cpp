#include <iostream>

#include "smmqg/cli.hpp"

int main(int argc, char** argv) { return smmqg::run_cli(argc, argv, std::cout, std::cerr); }
