#include <doctest.h>

TEST_SUITE("iforest") {}
