#include <iostream>
#include <string>
#include <vector>

#include "mma/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mma::run_cli(args, std::cout, std::cerr);
}
