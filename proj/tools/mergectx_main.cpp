#include "mergectx/cli.hpp"

int main(int argc, char** argv) { return mergectx::run_cli(argc, argv); }
