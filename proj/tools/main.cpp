#include "commands.hpp"

int main(int argc, char** argv) { return v1d3::cli::run(argc, argv); }
