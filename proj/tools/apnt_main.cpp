#include "cli.hpp"

int main(int argc, char** argv) { return apnt::run_cli(argc, argv); }
