#include "covmon/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return covmon::cli::run(argc, argv, std::cout, std::cerr);
}
