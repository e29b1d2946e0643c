#include "gp_cli.hpp"

int main(int argc, char** argv) { return gpcli::run(argc, argv); }
