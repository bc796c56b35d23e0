#include <catch2/catch_amalgamated.hpp>
#include "rsr/rsr.hpp"

TEST_CASE("placeholder generators") { CHECK(true); }
