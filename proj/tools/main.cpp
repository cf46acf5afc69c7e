#include "cli.hpp"

int main(int argc, char** argv) { return toolwatch::cli::run(argc, argv); }
