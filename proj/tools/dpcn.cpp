#include <iostream>

#include "dpcn/cli/cli.hpp"

int main(int argc, char** argv) { return dpcn::cli::cli_main(argc, argv, std::cout, std::cerr); }
