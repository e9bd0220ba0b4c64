// SPDX-License-Identifier: Apache-2.0
#include "rar/cli.hpp"

int main(int argc, char** argv) {
    return rar::cli::dispatch(argc, argv);
}
