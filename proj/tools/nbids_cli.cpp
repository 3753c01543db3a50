#include "nbids/cli.hpp"

int main(int argc, char** argv) {
  return nbids::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
