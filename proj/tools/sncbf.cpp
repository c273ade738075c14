#include "sncbf/cli.hpp"

int main(int argc, char** argv) { return sncbf::run_cli(argc, argv); }
