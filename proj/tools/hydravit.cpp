#include <iostream>

#include "hydravit/cli.hpp"

int main(int argc, char** argv) { return hydravit::run_cli(argc, argv, std::cout, std::cerr); }
