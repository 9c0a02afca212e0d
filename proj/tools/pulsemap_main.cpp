#include <iostream>
#include <string>
#include <vector>

#include "pulsemap/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pulsemap::run_command(args, std::cout, std::cerr);
}
