#include "driftlab/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return driftlab::parse_and_dispatch(argc, argv, std::cout, std::cerr); }
