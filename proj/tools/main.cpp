#include "tgmatch/cli.hpp"

int main(int argc, char** argv) { return tgmatch::cli::run(argc, argv); }
