#include "cli.hpp"
int main(int argc, char** argv) { return teaser::cli::run_cli(argc, argv); }
