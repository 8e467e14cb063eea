#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return dunet::cli::run(argc, argv, std::cout, std::cerr); }
