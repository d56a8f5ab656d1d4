#include <doctest.h>

#include <fstream>

#include "pour/runconfig.hpp"
#include "support/oracles.hpp"

TEST_CASE("config parsing: values, comments, and whitespace") {
    const std::string text =
        "# experiment 12\n"
        "seed = 99\n"
        "phantom.size=48\n"
        "  train.lr =  5e-5  \n"
        "ournet.enable_ovnet = false\n"
        "demons.iterations = 30,20,10\n"
        "\n"
        "metrics.masked = true\n";
    auto rc = pour::parse_run_config_text(text);
    CHECK(rc.seed == 99);
    CHECK(rc.phantom.size == 48);
    CHECK(rc.cascade.training.lr == doctest::Approx(5e-5));
    CHECK_FALSE(rc.cascade.ournet.enable_ovnet);
    CHECK(rc.cascade.ournet.enable_unnet);  // untouched default
    CHECK(rc.cascade.demons.iterations_per_level == std::vector<int>{30, 20, 10});
    CHECK(rc.eval_masked);
}

TEST_CASE("config parsing rejects unknown keys and malformed values") {
    CHECK_THROWS_AS(pour::parse_run_config_text("no_such_key = 1\n"), pour::ContractError);
    CHECK_THROWS_AS(pour::parse_run_config_text("phantom.size = large\n"), pour::ContractError);
    CHECK_THROWS_AS(pour::parse_run_config_text("seed 99\n"), pour::ContractError);
    CHECK_THROWS_AS(pour::parse_run_config_text("ournet.enable_unnet = maybe\n"),
                    pour::ContractError);
}

TEST_CASE("default dump parses back to the default configuration") {
    const std::string dump = pour::dump_default_config();
    auto rc = pour::parse_run_config_text(dump);
    pour::RunConfig def;
    CHECK(rc.seed == def.seed);
    CHECK(rc.phantom.size == def.phantom.size);
    CHECK(rc.cascade.n_cascades == def.cascade.n_cascades);
    CHECK(rc.cascade.ournet.base_channels == def.cascade.ournet.base_channels);
    CHECK(rc.cascade.training.steps == def.cascade.training.steps);
    CHECK(rc.cascade.training.lr == doctest::Approx(def.cascade.training.lr));
    CHECK(rc.cascade.demons.iterations_per_level == def.cascade.demons.iterations_per_level);
    CHECK(rc.degrade.count_fraction == doctest::Approx(def.degrade.count_fraction));
    CHECK(rc.ssim_window == def.ssim_window);
    CHECK(rc.eval_masked == def.eval_masked);

    // every non-comment line in the dump names a real key (round-trip safety)
    CHECK(dump.find("seed") != std::string::npos);
    CHECK(dump.find("train.steps") != std::string::npos);
}

TEST_CASE("config file loading") {
    testsup::TempDir tmp;
    {
        std::ofstream f(tmp.file("run.cfg"));
        f << "seed = 7\nphantom.size = 16\n";
    }
    auto rc = pour::parse_run_config(tmp.file("run.cfg"));
    CHECK(rc.seed == 7);
    CHECK(rc.phantom.size == 16);
    CHECK_THROWS_AS(pour::parse_run_config(tmp.file("nope.cfg")), pour::FormatError);
}
