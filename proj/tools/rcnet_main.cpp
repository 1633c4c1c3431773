#include <iostream>
#include <string>
#include <vector>

#include "rcnet/cli.hpp"
#include "rcnet/parallel.hpp"

int main(int argc, char** argv) {
  rcnet::configure_threads_from_env();
  std::vector<std::string> args(argv, argv + argc);
  return rcnet::run_cli(args, std::cout, std::cerr);
}
