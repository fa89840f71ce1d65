#include <string>
#include <vector>

#include "qfv/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return qfv::run_cli(args);
}
