#include "rftlab/cli.hpp"

int main(int argc, char** argv) { return rftlab::cli::main(argc, argv); }
