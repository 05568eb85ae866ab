#include "stcn/cli.hpp"

int main(int argc, char** argv) { return stcn::run_cli(argc, argv); }
