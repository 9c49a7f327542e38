#include <iostream>
#include <string>
#include <vector>

#include "rmpc/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return rmpc::cli::run(args, {std::cout, std::cerr});
}
