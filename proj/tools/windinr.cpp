#include "windinr/cli.hpp"

int main(int argc, char** argv) { return windinr::cli::main(argc, argv); }
