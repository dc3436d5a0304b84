#include <iostream>

#include "prnet/cli.hpp"

int main(int argc, char** argv) {
  return prnet::run_cli(argc, argv, std::cout, std::cerr);
}
