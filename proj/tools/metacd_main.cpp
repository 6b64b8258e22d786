#include "metacd/cli.hpp"

int main(int argc, char** argv) { return metacd::cli_main(argc, argv); }
