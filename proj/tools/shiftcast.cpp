#include "shift/cli.hpp"

int main(int argc, char** argv) { return shift::cli::run(argc, argv); }
