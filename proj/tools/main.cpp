#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return ddf2pol::cli::run(argc, argv, std::cout, std::cerr); }
