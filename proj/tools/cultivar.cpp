#include <cstdio>

#include "CLI11.hpp"
#include "cultivar/circuit.h"

int main(int argc, char **argv) {
    CLI::App app{"magic state cultivation workbench"};
    app.require_subcommand(0, 1);
    CLI11_PARSE(app, argc, argv);
    std::puts("cultivar: no subcommand given (see --help)");
    return 0;
}
