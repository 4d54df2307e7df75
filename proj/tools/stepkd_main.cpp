#include <iostream>

#include "stepkd/cli.hpp"

int main(int argc, char** argv) { return stepkd::run_cli(argc, argv, std::cout, std::cerr); }
