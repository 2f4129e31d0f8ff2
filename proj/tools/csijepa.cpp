#include "csijepa/cli.hpp"

int main(int argc, char** argv) { return csijepa::dispatch(argc, argv); }
