#include <doctest.h>

TEST_SUITE("cluster") {}
