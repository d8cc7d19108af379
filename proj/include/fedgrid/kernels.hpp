#pragma once

// Batched update kernels for the actor-critic trainer. Each kernel comes in
// two flavours: the OpenMP-parallel version (parallel over batch samples) and
// a plain serial reference (`*_ref`) kept for testing and benchmarking. Both
// are bitwise identical for any thread count: randomness is drawn by the
// caller before the loop, and per-sample gradient contributions land in
// per-sample slots that are reduced in fixed sample order afterwards.

#include <vector>

#include "fedgrid/neural.hpp"

namespace fedgrid::sac {

// Which critic pair drives targets and the actor objective.
enum class QMode { kClipped, kSingle };

// Flat, struct-of-arrays transition batch (actions are scalar).
struct Batch {
    int n = 0;
    int obs_dim = 0;
    std::vector<double> obs;       // n * obs_dim
    std::vector<double> act;       // n
    std::vector<double> rew;       // n
    std::vector<double> next_obs;  // n * obs_dim
    std::vector<double> done;      // n, 0.0 or 1.0
};

// Reusable per-sample scratch so the hot loops never allocate.
struct KernelScratch {
    std::vector<neural::Workspace> ws_a;
    std::vector<neural::Workspace> ws_q;
    std::vector<neural::Workspace> ws_q2;
    std::vector<neural::Grads> slots;
    std::vector<int> slot_shape;  // layer sizes the slots were built for
    std::vector<std::vector<double>> vec_a;
    std::vector<std::vector<double>> vec_b;

    void ensure(int n, const neural::Mlp* slot_net);
};

// Squashed-Gaussian policy over rows of obs: actions scaled by bound,
// log-probs in squashed (unscaled) space. Zero noise gives the deterministic
// action tanh(mean)*bound.
void policy_batch(const neural::Mlp& actor, const std::vector<double>& obs, int n,
                  int obs_dim, const std::vector<double>& noise, double bound,
                  std::vector<double>& actions, std::vector<double>& log_probs,
                  KernelScratch& scratch);
void policy_batch_ref(const neural::Mlp& actor, const std::vector<double>& obs, int n,
                      int obs_dim, const std::vector<double>& noise, double bound,
                      std::vector<double>& actions, std::vector<double>& log_probs);

// Q(o, u) for each row; critic input is [obs_row, action].
void q_batch(const neural::Mlp& critic, const std::vector<double>& obs,
             const std::vector<double>& act, int n, int obs_dim, std::vector<double>& q,
             KernelScratch& scratch);
void q_batch_ref(const neural::Mlp& critic, const std::vector<double>& obs,
                 const std::vector<double>& act, int n, int obs_dim,
                 std::vector<double>& q);

// Mean-squared-error critic loss against fixed targets y; gradient summed
// into out (zeroed first). Returns the loss.
double critic_grad_batch(const neural::Mlp& critic, const Batch& batch,
                         const std::vector<double>& y, neural::Grads& out,
                         KernelScratch& scratch);
double critic_grad_batch_ref(const neural::Mlp& critic, const Batch& batch,
                             const std::vector<double>& y, neural::Grads& out);

// Reparameterized actor surrogate: mean over the batch of
// zeta*log pi(u|o) - Q_active(o, u), with u = bound*tanh(mean + sigma*eps) and
// frozen per-sample noise. Q_active is the per-sample min of q1/q2 when q2 is
// non-null (clipped mode), else q1. Critics stay untouched; their role is to
// shape d(loss)/d(action). Returns the loss; gradient summed into out.
double actor_grad_batch(const neural::Mlp& actor, const neural::Mlp& q1,
                        const neural::Mlp* q2, const std::vector<double>& obs, int n,
                        int obs_dim, const std::vector<double>& noise, double zeta,
                        double bound, neural::Grads& out, KernelScratch& scratch);
double actor_grad_batch_ref(const neural::Mlp& actor, const neural::Mlp& q1,
                            const neural::Mlp* q2, const std::vector<double>& obs, int n,
                            int obs_dim, const std::vector<double>& noise, double zeta,
                            double bound, neural::Grads& out);

}  // namespace fedgrid::sac
