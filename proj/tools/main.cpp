#include "vctrl/cli.hpp"

int main(int argc, char** argv) { return vctrl::cli_main(argc, argv); }
