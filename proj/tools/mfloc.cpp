#include "mfloc/cli.hpp"

int main(int argc, char** argv) { return mfloc::cli::run_cli(argc, argv); }
