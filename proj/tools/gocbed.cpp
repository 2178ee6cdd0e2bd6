#include "gocbed/cli.hpp"

int main(int argc, char** argv) { return gocbed::cli::run(argc, argv); }
