#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest_torch.hpp"

#include <torch/torch.h>

int main(int argc, char** argv) {
    // Single-threaded kernels are part of the determinism contract.
    torch::set_num_threads(1);
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
