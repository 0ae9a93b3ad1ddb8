#include <iostream>
#include <string>
#include <vector>

#include "puzzlegan/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return puzzlegan::cli::run(args, std::cout, std::cerr);
}
