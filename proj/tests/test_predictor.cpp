#include <doctest.h>

TEST_SUITE("predictor") {}
