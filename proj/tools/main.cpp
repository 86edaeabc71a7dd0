#include "cli.hpp"

int main(int argc, char** argv) { return nfnoise::cli::run(argc, argv); }
