#include <vector>

#include "dmvt/cli.hpp"

int main(int argc, char **argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dmvt::cli_main(args);
}
