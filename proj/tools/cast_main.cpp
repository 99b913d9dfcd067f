#include <iostream>

#include "cast/cli.hpp"

int main(int argc, char** argv) { return cast::run_cli(argc, argv, std::cout, std::cerr); }
