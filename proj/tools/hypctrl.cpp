#include "hypctrl/cli.hpp"

int main(int argc, char** argv) { return hypctrl::cli::run_command(argc, argv); }
