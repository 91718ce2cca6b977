#include "cdstraj/cli.hpp"

int main(int argc, char** argv) { return cdstraj::cli_main(argc, argv); }
