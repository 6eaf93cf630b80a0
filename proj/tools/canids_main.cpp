#include "commands.hpp"

int main(int argc, char** argv) { return canids::cli::run_cli(argc, argv); }
