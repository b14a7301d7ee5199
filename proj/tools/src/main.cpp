#include <iostream>

#include "mesm_cli/cli.hpp"

int main(int argc, char** argv) { return mesm::cli::run(argc, argv, std::cout, std::cerr); }
