#include "flare/cli.hpp"

int main(int argc, char** argv) { return flare::cli::run(argc, argv); }
