#include "ahgs/cli.hpp"

int main(int argc, char** argv) { return ahgs::cli::run(argc, argv); }
