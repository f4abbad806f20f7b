#include <catch2/catch_amalgamated.hpp>

#include "prgen/verify.hpp"

using namespace prgen;

TEST_CASE("oracle suite holds on a fresh checkout") {
    for (const verify::CheckResult& r : verify::run_all(2)) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.passed);
    }
}

TEST_CASE("a corrupted TaiLr denominator is caught by name") {
    // weight with gamma dropped from the denominator
    const auto corrupted = [](double q, double gamma) {
        return q / ((1.0 - gamma) * q + 1e-9);
    };
    const verify::CheckResult r = verify::check_tailr_fixed_point(corrupted);
    CHECK(r.name == "fixed_points.tailr");
    CHECK_FALSE(r.passed);
}

TEST_CASE("truncr waterfill oracle solves the hand-checked instance") {
    // P = (.1,.2,.3,.4), keep 0.6: ceiling 5/18 over the top three, 1/6 kept
    const std::vector<double> q =
        verify::truncr_waterfill_oracle({0.1, 0.2, 0.3, 0.4}, 0.6);
    REQUIRE(q.size() == 4);
    CHECK(q[0] == Catch::Approx(1.0 / 6.0).margin(1e-12));
    CHECK(q[1] == Catch::Approx(5.0 / 18.0).margin(1e-12));
    CHECK(q[2] == Catch::Approx(5.0 / 18.0).margin(1e-12));
    CHECK(q[3] == Catch::Approx(5.0 / 18.0).margin(1e-12));
}
