#include "stablegroups/cli.hpp"

int main(int argc, char** argv) { return stablegroups::cli::main(argc, argv); }
