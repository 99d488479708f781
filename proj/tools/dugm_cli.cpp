#include <dugm/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return dugm::cli_dispatch(argc, argv, std::cout, std::cerr); }
