#include <iostream>

#include "guide/cli.hpp"

int main(int argc, char** argv) {
  return guide::cli_main(argc, argv, std::cout, std::cerr);
}
