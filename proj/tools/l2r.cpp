#include "l2r/cli.hpp"

int main(int argc, char** argv) { return l2r::cli::run(argc, argv); }
