#include <string>
#include <vector>

#include "dsah_cli.hpp"

int main(int argc, char** argv) {
  return dsah::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
