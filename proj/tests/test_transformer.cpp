#include <doctest.h>

TEST_SUITE("transformer") {}
