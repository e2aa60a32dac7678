#ifndef UADA_TESTS_DOCTEST_TORCH_HPP
#define UADA_TESTS_DOCTEST_TORCH_HPP

// libtorch's logging header defines its own CHECK; doctest's takes over here.
#include <torch/torch.h>
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>

#endif  // UADA_TESTS_DOCTEST_TORCH_HPP
