#include <iostream>

#include "neurofuse/cli.hpp"

int main(int argc, char** argv) { return neurofuse::cli::dispatch(argc, argv, std::cout, std::cerr); }
