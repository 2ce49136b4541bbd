#include "instrsim/cli.hpp"

int main(int argc, char** argv) { return instrsim::cli::run(argc, argv); }
