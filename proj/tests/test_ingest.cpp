#include <doctest.h>

TEST_SUITE("ingest") {}
