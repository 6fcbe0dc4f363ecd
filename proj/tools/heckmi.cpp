#include "heckmi/cli.hpp"

int main(int argc, char** argv) { return heckmi::run_cli(argc, argv); }
