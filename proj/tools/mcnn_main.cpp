#include <iostream>
#include <string>
#include <vector>

#include "mcnn/commands.hpp"

int main(int argc, char** argv) {
  mcnn::configure_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return mcnn::run_cli(args, std::cout, std::cerr);
}
