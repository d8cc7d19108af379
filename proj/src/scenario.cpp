#include "fedgrid/scenario.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace fedgrid::scenario {

namespace {

int magnitude_levels(const ScenarioConfig& cfg) {
    if (cfg.mag_step <= 0.0 || cfg.mag_min <= 0.0 || cfg.mag_max < cfg.mag_min)
        throw ConfigError("scenario magnitude bounds invalid");
    return static_cast<int>(std::floor((cfg.mag_max - cfg.mag_min) / cfg.mag_step + 1e-9)) + 1;
}

double magnitude_at(const ScenarioConfig& cfg, int level) {
    // Attacks pull the voltage set-point down: negative offsets.
    return -(cfg.mag_min + level * cfg.mag_step);
}

// Deterministic Fisher-Yates: std::shuffle's distribution is
// implementation-defined, so index reduction is done explicitly.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

std::vector<AttackScenario> enumerate_all(const ScenarioConfig& cfg) {
    if (cfg.gfm_buses.empty()) throw ConfigError("scenario config lists no GFM buses");
    if (cfg.t_a_min < 0 || cfg.t_a_max < cfg.t_a_min)
        throw ConfigError("scenario onset window invalid");
    const int n = static_cast<int>(cfg.gfm_buses.size());
    const int levels = magnitude_levels(cfg);

    std::vector<AttackScenario> all;
    for (int mask = 1; mask < (1 << n); ++mask) {
        std::vector<int> targets;
        for (int b = 0; b < n; ++b)
            if (mask & (1 << b)) targets.push_back(cfg.gfm_buses[b]);
        const int k = static_cast<int>(targets.size());
        std::uint64_t combos = 1;
        for (int i = 0; i < k; ++i) combos *= levels;
        for (std::uint64_t c = 0; c < combos; ++c) {
            std::vector<double> mags(k);
            std::uint64_t rest = c;
            for (int i = 0; i < k; ++i) {
                mags[i] = magnitude_at(cfg, static_cast<int>(rest % levels));
                rest /= levels;
            }
            for (int t_a = cfg.t_a_min; t_a <= cfg.t_a_max; ++t_a) {
                AttackScenario s;
                s.target_buses = targets;
                s.magnitudes = mags;
                s.t_a = t_a;
                all.push_back(std::move(s));
            }
        }
    }
    return all;
}

}  // namespace

std::uint64_t pool_capacity(const ScenarioConfig& cfg) {
    const int n = static_cast<int>(cfg.gfm_buses.size());
    const int levels = magnitude_levels(cfg);
    const std::uint64_t onsets = static_cast<std::uint64_t>(cfg.t_a_max - cfg.t_a_min + 1);
    std::uint64_t total = 0;
    for (int mask = 1; mask < (1 << n); ++mask) {
        int k = 0;
        for (int b = 0; b < n; ++b)
            if (mask & (1 << b)) ++k;
        std::uint64_t combos = 1;
        for (int i = 0; i < k; ++i) combos *= levels;
        total += combos * onsets;
    }
    return total;
}

ScenarioPool generate_pool(const ScenarioConfig& cfg, PoolKind kind, std::uint64_t seed) {
    const int want = kind == PoolKind::kTrain ? cfg.train_size : cfg.test_size;
    if (want < 1) throw ConfigError("requested pool size must be >= 1");

    std::vector<AttackScenario> all = enumerate_all(cfg);

    auto take = [&](PoolKind k, std::size_t count,
                    const std::vector<AttackScenario>& exclude) {
        std::vector<AttackScenario> pool_src = all;
        std::mt19937_64 rng(mix_seed(seed, k == PoolKind::kTrain ? 101 : 202));
        deterministic_shuffle(pool_src, rng);
        std::vector<AttackScenario> out;
        for (auto& s : pool_src) {
            if (out.size() == count) break;
            if (std::find(exclude.begin(), exclude.end(), s) != exclude.end()) continue;
            out.push_back(std::move(s));
        }
        if (out.size() < count)
            throw ConfigError("requested pool size " + std::to_string(count) +
                              " exceeds distinct-scenario capacity " +
                              std::to_string(all.size() - exclude.size()));
        return out;
    };

    ScenarioPool pool;
    pool.kind = kind;
    if (kind == PoolKind::kTrain) {
        pool.scenarios = take(PoolKind::kTrain, static_cast<std::size_t>(want), {});
    } else {
        // Held-out guarantee: the test pool never contains a train scenario.
        std::vector<AttackScenario> train =
            take(PoolKind::kTrain, static_cast<std::size_t>(cfg.train_size), {});
        pool.scenarios = take(PoolKind::kTest, static_cast<std::size_t>(want), train);
    }
    const char* tag = kind == PoolKind::kTrain ? "train" : "test";
    for (std::size_t i = 0; i < pool.scenarios.size(); ++i) {
        pool.scenarios[i].id = static_cast<int>(i);
        pool.scenarios[i].seed_tag =
            std::string(tag) + "-" + hash_hex(mix_seed(seed, fnv1a64(tag) + i));
    }
    return pool;
}

const AttackScenario& sample_scenario(const ScenarioPool& pool, std::mt19937_64& rng) {
    if (pool.scenarios.empty()) throw ConfigError("cannot sample from an empty pool");
    return pool.scenarios[static_cast<std::size_t>(rng() % pool.scenarios.size())];
}

std::vector<double> attack_signal(const AttackScenario& scenario, int t,
                                  const std::vector<int>& buses) {
    if (t < 0) throw ConfigError("attack_signal: negative step");
    if (!scenario.onsets.empty() &&
        scenario.onsets.size() != scenario.target_buses.size())
        throw ConfigError("attack_signal: onsets must match target count");
    std::vector<double> out(buses.size(), 0.0);
    for (std::size_t i = 0; i < scenario.target_buses.size(); ++i) {
        const int onset = scenario.onsets.empty() ? scenario.t_a : scenario.onsets[i];
        const bool active =
            t >= onset && (scenario.duration <= 0 || t < onset + scenario.duration);
        if (!active) continue;
        for (std::size_t b = 0; b < buses.size(); ++b)
            if (buses[b] == scenario.target_buses[i]) out[b] = scenario.magnitudes[i];
    }
    return out;
}

std::string pool_to_json(const ScenarioPool& pool) {
    nlohmann::ordered_json j;
    j["kind"] = pool.kind == PoolKind::kTrain ? "train" : "test";
    j["scenarios"] = nlohmann::ordered_json::array();
    for (const auto& s : pool.scenarios) {
        nlohmann::ordered_json js;
        js["id"] = s.id;
        js["target_buses"] = s.target_buses;
        js["magnitudes"] = s.magnitudes;
        js["t_a"] = s.t_a;
        js["duration"] = s.duration;
        if (!s.onsets.empty()) js["onsets"] = s.onsets;
        js["seed_tag"] = s.seed_tag;
        j["scenarios"].push_back(std::move(js));
    }
    return j.dump(2) + "\n";
}

ScenarioPool pool_from_json(const std::string& text) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("pool JSON parse error: ") + e.what());
    }
    try {
        ScenarioPool pool;
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "train")
            pool.kind = PoolKind::kTrain;
        else if (kind == "test")
            pool.kind = PoolKind::kTest;
        else
            throw ConfigError("unknown pool kind '" + kind + "'");
        for (const auto& js : j.at("scenarios")) {
            AttackScenario s;
            s.id = js.at("id").get<int>();
            s.target_buses = js.at("target_buses").get<std::vector<int>>();
            s.magnitudes = js.at("magnitudes").get<std::vector<double>>();
            s.t_a = js.at("t_a").get<int>();
            s.duration = js.at("duration").get<int>();
            if (js.contains("onsets")) s.onsets = js.at("onsets").get<std::vector<int>>();
            s.seed_tag = js.value("seed_tag", std::string());
            if (s.target_buses.empty() || s.target_buses.size() != s.magnitudes.size())
                throw ConfigError("scenario " + std::to_string(s.id) +
                                  " has inconsistent targets/magnitudes");
            if (!s.onsets.empty() && s.onsets.size() != s.target_buses.size())
                throw ConfigError("scenario " + std::to_string(s.id) +
                                  " has inconsistent onsets");
            pool.scenarios.push_back(std::move(s));
        }
        return pool;
    } catch (const nlohmann::ordered_json::exception& e) {
        throw ConfigError(std::string("pool JSON field error: ") + e.what());
    }
}

}  // namespace fedgrid::scenario
