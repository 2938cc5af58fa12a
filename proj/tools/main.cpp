#include "bandits/cli.hpp"

int main(int argc, char** argv) { return bandits::cli::run_main(argc, argv); }
