#include <iostream>
#include <string>
#include <vector>

#include "livesong/app.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return livesong::run_cli(args, std::cout, std::cerr);
}
