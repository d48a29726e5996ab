#include <iostream>

#include "calibst/cli.hpp"

int main(int argc, char** argv) {
  return calibst::cli::run_cli(argc, argv, std::cout, std::cerr);
}
