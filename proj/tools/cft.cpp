#include "cft/cli.hpp"

int main(int argc, char** argv) { return cft::cli::run(argc, argv); }
