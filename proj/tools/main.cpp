#include "kvsim/cli.hpp"

int main(int argc, char** argv) { return kvsim::run_cli(argc, argv); }
