#include "cli.hpp"

int main(int argc, char** argv) { return hypothetica::cli::run(argc, argv); }
