#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fedgrid/scenario.hpp"
#include "fedgrid/util.hpp"

using namespace fedgrid;
using namespace fedgrid::scenario;

namespace {

ScenarioConfig small_config() {
    ScenarioConfig cfg;
    cfg.gfm_buses = {51, 105, 80};
    return cfg;
}

// Canonical key for duplicate / exclusion checks.
std::string key(const AttackScenario& s) {
    std::string k;
    for (std::size_t i = 0; i < s.target_buses.size(); ++i)
        k += std::to_string(s.target_buses[i]) + ":" + format_double(s.magnitudes[i]) + ";";
    k += "@" + std::to_string(s.t_a) + "/" + std::to_string(s.duration);
    return k;
}

}  // namespace

TEST_CASE("pool_capacity counts (subsets x magnitudes x onsets)") {
    ScenarioConfig cfg = small_config();
    // 6 magnitudes per target (0.05..0.10 step 0.01), 11 onsets (5..15),
    // subsets of 3 buses: 3 singles*6 + 3 pairs*36 + 1 triple*216 = 342.
    CHECK(pool_capacity(cfg) == 342ull * 11ull);

    ScenarioConfig one = cfg;
    one.gfm_buses = {51};
    one.t_a_min = one.t_a_max = 5;
    CHECK(pool_capacity(one) == 6ull);
}

TEST_CASE("generate_pool: deterministic, sized, within the configured grid") {
    ScenarioConfig cfg = small_config();
    ScenarioPool a = generate_pool(cfg, PoolKind::kTrain, 7);
    ScenarioPool b = generate_pool(cfg, PoolKind::kTrain, 7);
    REQUIRE(a.scenarios.size() == static_cast<std::size_t>(cfg.train_size));
    REQUIRE(b.scenarios.size() == a.scenarios.size());
    for (std::size_t i = 0; i < a.scenarios.size(); ++i) {
        CHECK(a.scenarios[i] == b.scenarios[i]);
        CHECK(a.scenarios[i].id == static_cast<int>(i));
    }

    ScenarioPool c = generate_pool(cfg, PoolKind::kTrain, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.scenarios.size(); ++i)
        if (!(a.scenarios[i] == c.scenarios[i])) any_diff = true;
    CHECK(any_diff);

    for (const AttackScenario& s : a.scenarios) {
        REQUIRE(!s.target_buses.empty());
        REQUIRE(s.target_buses.size() == s.magnitudes.size());
        // Targets follow the configured bus order, no repeats.
        std::size_t cursor = 0;
        for (int bus : s.target_buses) {
            auto it = std::find(cfg.gfm_buses.begin() + cursor, cfg.gfm_buses.end(), bus);
            CHECK(it != cfg.gfm_buses.end());
            cursor = static_cast<std::size_t>(it - cfg.gfm_buses.begin()) + 1;
        }
        for (double mag : s.magnitudes) {
            CHECK(mag <= -cfg.mag_min + 1e-12);
            CHECK(mag >= -cfg.mag_max - 1e-12);
            // On the 0.01 grid.
            double steps = (-mag - cfg.mag_min) / cfg.mag_step;
            CHECK(std::abs(steps - std::round(steps)) < 1e-9);
        }
        CHECK(s.t_a >= cfg.t_a_min);
        CHECK(s.t_a <= cfg.t_a_max);
        CHECK(s.onsets.empty());
    }
}

TEST_CASE("generate_pool: test pool excludes every train scenario") {
    ScenarioConfig cfg = small_config();
    for (std::uint64_t seed : {1ull, 7ull, 99ull}) {
        CAPTURE(seed);
        ScenarioPool train = generate_pool(cfg, PoolKind::kTrain, seed);
        ScenarioPool test = generate_pool(cfg, PoolKind::kTest, seed);
        CHECK(test.scenarios.size() == static_cast<std::size_t>(cfg.test_size));
        std::set<std::string> train_keys;
        for (const AttackScenario& s : train.scenarios) train_keys.insert(key(s));
        std::set<std::string> test_keys;
        for (const AttackScenario& s : test.scenarios) {
            CHECK(train_keys.count(key(s)) == 0);
            test_keys.insert(key(s));
        }
        // No duplicates inside either pool.
        CHECK(train_keys.size() == train.scenarios.size());
        CHECK(test_keys.size() == test.scenarios.size());
    }
}

TEST_CASE("generate_pool: rejects requests beyond capacity") {
    ScenarioConfig cfg = small_config();
    cfg.gfm_buses = {51};
    cfg.t_a_min = cfg.t_a_max = 5;  // capacity 6
    cfg.train_size = 3;
    cfg.test_size = 10;  // 3 + 10 > 6
    CHECK_THROWS_AS(generate_pool(cfg, PoolKind::kTest, 1), ConfigError);
}

TEST_CASE("sample_scenario: uniform draw is deterministic in rng state") {
    ScenarioConfig cfg = small_config();
    ScenarioPool pool = generate_pool(cfg, PoolKind::kTrain, 3);
    std::mt19937_64 r1(42), r2(42);
    for (int i = 0; i < 20; ++i)
        CHECK(sample_scenario(pool, r1).id == sample_scenario(pool, r2).id);
    // All pool members reachable.
    std::mt19937_64 r3(7);
    std::set<int> seen;
    for (int i = 0; i < 500; ++i) seen.insert(sample_scenario(pool, r3).id);
    CHECK(seen.size() == pool.scenarios.size());
}

TEST_CASE("attack_signal: window, mapping, and magnitudes") {
    AttackScenario s;
    s.id = 1;
    s.target_buses = {51, 80};
    s.magnitudes = {-0.07, -0.10};
    s.t_a = 5;
    s.duration = 3;

    std::vector<int> buses = {51, 105, 80};
    CHECK(attack_signal(s, 4, buses) == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(attack_signal(s, 5, buses) == std::vector<double>{-0.07, 0.0, -0.10});
    CHECK(attack_signal(s, 7, buses) == std::vector<double>{-0.07, 0.0, -0.10});
    CHECK(attack_signal(s, 8, buses) == std::vector<double>{0.0, 0.0, 0.0});

    s.duration = 0;  // rest of episode
    CHECK(attack_signal(s, 1000, buses) == std::vector<double>{-0.07, 0.0, -0.10});

    // Bus order in the query decides result order.
    std::vector<int> reversed = {80, 105, 51};
    CHECK(attack_signal(s, 6, reversed) == std::vector<double>{-0.10, 0.0, -0.07});
}

TEST_CASE("attack_signal: staggered per-target onsets") {
    AttackScenario s;
    s.target_buses = {51, 105, 80};
    s.magnitudes = {-0.05, -0.075, -0.10};
    s.t_a = 40;
    s.onsets = {40, 140, 240};
    s.duration = 0;

    std::vector<int> buses = {51, 105, 80};
    CHECK(attack_signal(s, 39, buses) == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(attack_signal(s, 40, buses) == std::vector<double>{-0.05, 0.0, 0.0});
    CHECK(attack_signal(s, 139, buses) == std::vector<double>{-0.05, 0.0, 0.0});
    CHECK(attack_signal(s, 140, buses) == std::vector<double>{-0.05, -0.075, 0.0});
    CHECK(attack_signal(s, 240, buses) == std::vector<double>{-0.05, -0.075, -0.10});

    // Mismatched onset count is rejected.
    AttackScenario bad = s;
    bad.onsets = {40, 140};
    CHECK_THROWS_AS(attack_signal(bad, 50, buses), ConfigError);
}

TEST_CASE("pool JSON round-trip is exact, including optional onsets") {
    ScenarioConfig cfg = small_config();
    ScenarioPool pool = generate_pool(cfg, PoolKind::kTest, 11);
    pool.scenarios[0].onsets = {pool.scenarios[0].t_a,
                                pool.scenarios[0].t_a + 5};
    while (pool.scenarios[0].onsets.size() < pool.scenarios[0].target_buses.size())
        pool.scenarios[0].onsets.push_back(pool.scenarios[0].t_a + 9);

    std::string text = pool_to_json(pool);
    ScenarioPool back = pool_from_json(text);
    CHECK(back.kind == pool.kind);
    REQUIRE(back.scenarios.size() == pool.scenarios.size());
    for (std::size_t i = 0; i < pool.scenarios.size(); ++i) {
        CHECK(back.scenarios[i] == pool.scenarios[i]);
        CHECK(back.scenarios[i].id == pool.scenarios[i].id);
    }
    // Serialization is itself deterministic.
    CHECK(pool_to_json(back) == text);
}

TEST_CASE("pool JSON: malformed input is rejected") {
    CHECK_THROWS_AS(pool_from_json("nope"), ConfigError);
    CHECK_THROWS_AS(pool_from_json("{}"), ConfigError);
    CHECK_THROWS_AS(pool_from_json(R"({"kind":"train","scenarios":[{"id":0}]})"),
                    ConfigError);
}
