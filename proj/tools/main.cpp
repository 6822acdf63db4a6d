#include <iostream>
#include <string>
#include <vector>

#include "ldlva/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return ldlva::cli::run_cli(args, std::cout, std::cerr);
}
