#include "amcr/cli.hpp"

int main(int argc, char** argv) { return amcr::cli::run(argc, argv); }
