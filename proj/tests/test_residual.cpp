#include <doctest.h>

TEST_SUITE("residual") {}
