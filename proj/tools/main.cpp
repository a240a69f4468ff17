#include <iostream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "vift/logging.hpp"

int main(int argc, char** argv) {
  vift::configure_logging();
  return vift::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
