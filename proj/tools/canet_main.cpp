#include "canet/cli.hpp"

int main(int argc, char** argv) { return canet::cli_main(argc, argv); }
