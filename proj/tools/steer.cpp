#include <iostream>

#include "attsteer/cli.hpp"

int main(int argc, char** argv) {
  return attsteer::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
