// Benchmark: OpenMP-parallel batched kernels vs their serial reference
// implementations, plus the quasi-static grid step. Verifies bitwise
// equality between the two kernel flavours on every run.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "fedgrid/env.hpp"
#include "fedgrid/grid.hpp"
#include "fedgrid/kernels.hpp"
#include "fedgrid/neural.hpp"
#include "fedgrid/parallel.hpp"
#include "fedgrid/scenario.hpp"
#include "fedgrid/util.hpp"

namespace {

using namespace fedgrid;

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch())
        .count();
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i]))
            return false;
    return true;
}

bool grads_equal(const neural::Grads& a, const neural::Grads& b) {
    if (a.w.size() != b.w.size()) return false;
    for (std::size_t l = 0; l < a.w.size(); ++l)
        if (!bits_equal(a.w[l], b.w[l]) || !bits_equal(a.b[l], b.b[l])) return false;
    return true;
}

template <typename F>
double time_best_ms(int reps, F&& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        double t0 = now_ms();
        fn();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

struct Row {
    std::string name;
    double parallel_ms;
    double serial_ms;
    bool bitwise;
};

}  // namespace

int main(int argc, char** argv) {
    int n = 4096;
    int reps = 5;
    for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (a == "--batch" && i + 1 < argc)
            n = std::stoi(argv[++i]);
        else if (a == "--reps" && i + 1 < argc)
            reps = std::stoi(argv[++i]);
        else {
            std::fprintf(stderr, "usage: %s [--batch N] [--reps R]\n", argv[0]);
            return 1;
        }
    }

    const int obs_dim = 6;
    std::mt19937_64 rng(mix_seed(7, 42));
    neural::Mlp actor = neural::make_mlp({obs_dim, 64, 64, 2}, mix_seed(7, 0));
    neural::Mlp critic1 = neural::make_mlp({obs_dim + 1, 64, 64, 1}, mix_seed(7, 1));
    neural::Mlp critic2 = neural::make_mlp({obs_dim + 1, 64, 64, 1}, mix_seed(7, 2));

    sac::Batch batch;
    batch.n = n;
    batch.obs_dim = obs_dim;
    batch.obs.resize(static_cast<std::size_t>(n) * obs_dim);
    batch.act.resize(n);
    batch.rew.resize(n);
    batch.next_obs.resize(static_cast<std::size_t>(n) * obs_dim);
    batch.done.assign(n, 0.0);
    for (double& v : batch.obs) v = 1.0 + 0.05 * standard_normal(rng);
    for (double& v : batch.act) v = 0.1 * std::tanh(standard_normal(rng));
    for (double& v : batch.rew) v = -std::abs(standard_normal(rng));
    for (double& v : batch.next_obs) v = 1.0 + 0.05 * standard_normal(rng);
    std::vector<double> noise(n), y(n);
    for (double& v : noise) v = standard_normal(rng);
    for (double& v : y) v = -1.0 - std::abs(standard_normal(rng));

    sac::KernelScratch scratch;
    std::vector<Row> rows;

    {
        std::vector<double> act_p, lp_p, act_s, lp_s;
        double tp = time_best_ms(reps, [&] {
            sac::policy_batch(actor, batch.obs, n, obs_dim, noise, 0.1, act_p, lp_p, scratch);
        });
        double ts = time_best_ms(reps, [&] {
            sac::policy_batch_ref(actor, batch.obs, n, obs_dim, noise, 0.1, act_s, lp_s);
        });
        rows.push_back({"policy_batch", tp, ts, bits_equal(act_p, act_s) && bits_equal(lp_p, lp_s)});
    }
    {
        std::vector<double> q_p, q_s;
        double tp = time_best_ms(reps, [&] {
            sac::q_batch(critic1, batch.obs, batch.act, n, obs_dim, q_p, scratch);
        });
        double ts = time_best_ms(reps, [&] {
            sac::q_batch_ref(critic1, batch.obs, batch.act, n, obs_dim, q_s);
        });
        rows.push_back({"q_batch", tp, ts, bits_equal(q_p, q_s)});
    }
    {
        neural::Grads gp = neural::make_grads(critic1);
        neural::Grads gs = neural::make_grads(critic1);
        double lp = 0.0, ls = 0.0;
        double tp = time_best_ms(
            reps, [&] { lp = sac::critic_grad_batch(critic1, batch, y, gp, scratch); });
        double ts = time_best_ms(
            reps, [&] { ls = sac::critic_grad_batch_ref(critic1, batch, y, gs); });
        bool same = grads_equal(gp, gs) &&
                    std::bit_cast<std::uint64_t>(lp) == std::bit_cast<std::uint64_t>(ls);
        rows.push_back({"critic_grad_batch", tp, ts, same});
    }
    {
        neural::Grads gp = neural::make_grads(actor);
        neural::Grads gs = neural::make_grads(actor);
        double lp = 0.0, ls = 0.0;
        double tp = time_best_ms(reps, [&] {
            lp = sac::actor_grad_batch(actor, critic1, &critic2, batch.obs, n, obs_dim,
                                       noise, 0.2, 0.1, gp, scratch);
        });
        double ts = time_best_ms(reps, [&] {
            ls = sac::actor_grad_batch_ref(actor, critic1, &critic2, batch.obs, n, obs_dim,
                                           noise, 0.2, 0.1, gs);
        });
        bool same = grads_equal(gp, gs) &&
                    std::bit_cast<std::uint64_t>(lp) == std::bit_cast<std::uint64_t>(ls);
        rows.push_back({"actor_grad_batch", tp, ts, same});
    }

    std::printf("batch size %d, %d reps (best-of), %d thread(s)\n\n", n, reps,
                threads_for(n));
    std::printf("%-20s %14s %14s %9s %9s\n", "kernel", "parallel (ms)", "serial (ms)",
                "speedup", "bitwise");
    bool all_ok = true;
    for (const Row& r : rows) {
        std::printf("%-20s %14.3f %14.3f %8.2fx %9s\n", r.name.c_str(), r.parallel_ms,
                    r.serial_ms, r.serial_ms / r.parallel_ms, r.bitwise ? "OK" : "MISMATCH");
        all_ok = all_ok && r.bitwise;
    }

    // Grid step timing: one quasi-static step of the three-microgrid network
    // under a worst-case set-point attack.
    {
        grid::NetworkModel model = grid::nm3_network();
        env::EnvConfig cfg;
        env::Env env(model, cfg);
        scenario::AttackScenario sc;
        sc.id = 0;
        for (int dev : model.gfm_devices()) {
            sc.target_buses.push_back(model.devices[dev].bus);
            sc.magnitudes.push_back(-0.10);
        }
        sc.t_a = 1;
        sc.duration = 0;
        env.reset(sc);
        std::vector<double> zero(env.num_agents(), 0.0);
        int steps = 0;
        double t0 = now_ms();
        while (!env.done() && steps < 40) {
            env.step(zero);
            ++steps;
        }
        double per_step = (now_ms() - t0) / steps;
        std::printf("\ngrid step (3 microgrids, 50 substeps): %.3f ms/step\n", per_step);
    }

    if (!all_ok) {
        std::printf("\nFAIL: parallel and serial kernels disagree\n");
        return 1;
    }
    std::printf("\nall kernel pairs bitwise identical\n");
    return 0;
}
