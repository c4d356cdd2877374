#include "fpgame/cli.hpp"

int main(int argc, char** argv) { return fpgame::main_entry(argc, argv); }
