#include "napt/cli.hpp"

int main(int argc, char** argv) { return napt::run_cli(argc, argv); }
