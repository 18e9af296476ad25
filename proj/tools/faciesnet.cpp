#include "faciesnet/cli.hpp"

int main(int argc, char** argv) { return faciesnet::cli::run(argc, argv); }
