#include "edgelite/cli.hpp"

int main(int argc, char** argv) { return edgelite::run_cli(argc, argv); }
