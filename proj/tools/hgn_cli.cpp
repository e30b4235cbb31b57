#include <iostream>

#include "hgn/cli.hpp"

int main(int argc, char** argv) { return hgn::cli::run(argc, argv, std::cout, std::cerr); }
