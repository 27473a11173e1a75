#include <doctest.h>

TEST_SUITE("proxies") {}
