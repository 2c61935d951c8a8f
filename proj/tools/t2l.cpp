#include "t2l/cli.hpp"

int main(int argc, char** argv) { return t2l::run(argc, argv); }
