#include <iostream>

#include "siag/cli.hpp"

int main(int argc, char** argv) { return siag::run_cli(argc, argv, std::cout, std::cerr); }
