#include "dpguard/cli.hpp"

int main(int argc, char** argv) { return dpguard::cli::run(argc, argv); }
