#include "uada/cli.hpp"

int main(int argc, char** argv) { return uada::run_command(argc, argv); }
