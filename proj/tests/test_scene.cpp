#include <doctest.h>

TEST_SUITE("scene") {}
