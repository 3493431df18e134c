#include <iostream>

#include "genrm/cli/commands.hpp"

int main(int argc, char** argv) {
  return genrm::cli::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
