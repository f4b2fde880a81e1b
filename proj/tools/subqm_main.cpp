#include "subqm/cli.hpp"

int main(int argc, char** argv) { return subqm::cli_main(argc, argv); }
