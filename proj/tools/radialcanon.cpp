#include "bic/cli.hpp"

int main(int argc, char** argv) { return bic::cli_main(argc, argv); }
