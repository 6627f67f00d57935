#include <iostream>

#include "gstrs/cli.hpp"

int main(int argc, char** argv) { return gstrs::run_cli(argc, argv, std::cout, std::cerr); }
