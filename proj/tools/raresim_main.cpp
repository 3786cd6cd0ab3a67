#include <iostream>
#include <string>
#include <vector>

#include "raresim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return raresim::cli::run(args, std::cout, std::cerr);
}
