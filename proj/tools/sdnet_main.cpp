#include "sdnet/cli.hpp"
int main(int argc, char** argv) { return sdnet::run_cli(argc, argv); }
