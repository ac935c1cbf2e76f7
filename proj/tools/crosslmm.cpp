#include <iostream>

#include "crosslmm/cli.hpp"

int main(int argc, char** argv) {
  return crosslmm::cli::run(argc, argv, std::cout, std::cerr);
}
