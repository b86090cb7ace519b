#include "polyavsr/cli.hpp"

int main(int argc, char** argv) { return polyavsr::cli_main(argc, argv); }
