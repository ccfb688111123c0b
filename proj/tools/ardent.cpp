#include "ardent/cli.hpp"

int main(int argc, char** argv) {
  return ardent::cli::main_entry(std::vector<std::string>(argv + 1, argv + argc));
}
