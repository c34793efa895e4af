#include "folkvae/cli.hpp"

int main(int argc, char** argv) {
    return folkvae::cli::dispatch(argc, argv);
}
