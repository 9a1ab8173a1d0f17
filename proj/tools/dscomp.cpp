#include "dscomp/cli.hpp"

int main(int argc, char** argv) { return dscomp::run_cli(argc, argv); }
