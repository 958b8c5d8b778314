#include "vaells/cli.hpp"

int main(int argc, char** argv) { return vaells::cli_main(argc, argv); }
