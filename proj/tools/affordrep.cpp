#include <iostream>
#include <string>
#include <vector>

#include "affordrep/pipeline.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return affordrep::cli::run(args, std::cout, std::cerr);
}
