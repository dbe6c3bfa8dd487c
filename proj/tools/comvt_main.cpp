#include <iostream>

#include "comvt/harness.hpp"

int main(int argc, char** argv) { return comvt::run_cli(argc, argv, std::cout, std::cerr); }
