#include <iostream>

#include "pillsort/cli.hpp"

int main(int argc, char** argv) {
  return pillsort::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
