#include <iostream>

#include "fpdanet/cli.hpp"

int main(int argc, char** argv) { return fpdanet::run_cli(argc, argv, std::cout, std::cerr); }
