#include <string>
#include <vector>

#include "framepick/cli.hpp"

int main(int argc, char** argv) { return framepick::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
