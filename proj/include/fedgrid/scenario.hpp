#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedgrid/util.hpp"

namespace fedgrid::scenario {

// One adversarial step-attack on GFM voltage set-points: the listed target
// buses get a constant offset from step t_a for `duration` steps
// (duration 0 = rest of episode).
struct AttackScenario {
    int id = 0;
    std::vector<int> target_buses;     // GFM bus ids, in configured bus order
    std::vector<double> magnitudes;    // p.u., one per target
    int t_a = 5;                       // onset step
    int duration = 0;                  // steps; 0 = rest of episode
    // Optional staggered onsets, one per target (hardware-in-the-loop style
    // schedules). Empty = every target starts at t_a. When set, t_a must be
    // the earliest entry (it anchors the reward phase switch).
    std::vector<int> onsets;
    std::string seed_tag;

    bool operator==(const AttackScenario& o) const {
        return target_buses == o.target_buses && magnitudes == o.magnitudes &&
               t_a == o.t_a && duration == o.duration && onsets == o.onsets;
    }
};

enum class PoolKind { kTrain, kTest };

struct ScenarioPool {
    PoolKind kind = PoolKind::kTrain;
    std::vector<AttackScenario> scenarios;
};

struct ScenarioConfig {
    std::vector<int> gfm_buses;   // attackable set-points, e.g. {51, 105, 80}
    double mag_min = 0.05;        // |magnitude| lower bound, p.u.
    double mag_max = 0.10;        // |magnitude| upper bound, p.u.
    double mag_step = 0.01;       // discretization of |magnitude|
    int t_a_min = 5;
    int t_a_max = 15;
    int train_size = 7;
    int test_size = 300;
};

// Number of distinct scenarios the discretized space supports.
std::uint64_t pool_capacity(const ScenarioConfig& cfg);

// Deterministic pool generation: enumerate every (target subset, magnitude
// assignment, onset) combination, shuffle with a kind-specific stream of
// `seed`, and take the requested count. The test pool excludes every
// scenario in the train pool for the same seed (held-out guarantee).
ScenarioPool generate_pool(const ScenarioConfig& cfg, PoolKind kind, std::uint64_t seed);

// Uniform draw from the pool, deterministic in rng state.
const AttackScenario& sample_scenario(const ScenarioPool& pool, std::mt19937_64& rng);

// Per-bus attack offsets at step t: cfg.gfm_buses order is NOT assumed; the
// result maps each of `buses` to its offset (zero when untargeted/outside
// the attack window).
std::vector<double> attack_signal(const AttackScenario& scenario, int t,
                                  const std::vector<int>& buses);

std::string pool_to_json(const ScenarioPool& pool);
ScenarioPool pool_from_json(const std::string& text);

}  // namespace fedgrid::scenario
