#include "crihp/cli.hpp"

int main(int argc, char** argv) { return crihp::cli(argc, argv); }
