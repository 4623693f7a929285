#include <iostream>
#include <string>
#include <vector>

#include "maskwatch/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return maskwatch::cli::run_cli(args, std::cout, std::cerr);
}
