#include <iostream>

#include "bdl/cli.hpp"

int main(int argc, char** argv) {
  return bdl::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
