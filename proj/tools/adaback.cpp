#include "adaback/cli.hpp"

int main(int argc, char** argv) { return adaback::run_cli(argc, argv); }
