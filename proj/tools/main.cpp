#include "cli.hpp"

int main(int argc, char** argv) { return ipsw::cli::run(argc, argv); }
