#include "cobe/cli.hpp"

int main(int argc, char** argv) { return cobe::cli::run_cli(argc, argv); }
