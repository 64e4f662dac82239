#include "scfc/cli.hpp"

int main(int argc, char** argv) { return scfc::cli::run(argc, argv); }
