#include "icll/cli.hpp"

int main(int argc, char** argv) { return icll::run_cli(argc, argv); }
