#include "cli.hpp"

int main(int argc, char** argv) { return mmqss::cli::run(argc, argv); }
