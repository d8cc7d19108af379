#include "fedgrid/kernels.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "fedgrid/parallel.hpp"
#include "fedgrid/util.hpp"

namespace fedgrid {

namespace {
std::atomic<int> g_threads{0};
}

int parallel_threads() { return g_threads.load(); }
void set_parallel_threads(int n) { g_threads.store(n < 0 ? 0 : n); }

int threads_for(int n) {
    int cap = g_threads.load();
    if (cap <= 0) {
#ifdef _OPENMP
        cap = omp_get_max_threads();
#else
        cap = 1;
#endif
    }
    return n < cap ? (n < 1 ? 1 : n) : cap;
}

}  // namespace fedgrid

namespace fedgrid::sac {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;
constexpr double kLog2 = 0.6931471805599453;

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double clamp_ls(double ls) {
    return ls < neural::kLogStdMin ? neural::kLogStdMin
                                   : (ls > neural::kLogStdMax ? neural::kLogStdMax : ls);
}

// Per-sample squashed-Gaussian evaluation shared by the kernels. Fills action
// (scaled by bound) and log-prob; optionally reports z and the clamp mask for
// backprop.
struct PolicyEval {
    double mu = 0.0, ls = 0.0, z = 0.0, a_unit = 0.0, u = 0.0, log_prob = 0.0;
    bool ls_clamped = false;
};

PolicyEval eval_policy(const std::vector<double>& head, double eps, double bound) {
    PolicyEval p;
    p.mu = head[0];
    double ls_raw = head[1];
    p.ls = clamp_ls(ls_raw);
    p.ls_clamped = (ls_raw != p.ls);
    p.z = p.mu + std::exp(p.ls) * eps;
    double a = std::tanh(p.z);
    const double interior = std::nextafter(1.0, 0.0);
    if (a >= 1.0) a = interior;
    if (a <= -1.0) a = -interior;
    p.a_unit = a;
    p.u = bound * a;
    p.log_prob = -0.5 * eps * eps - kHalfLog2Pi - p.ls -
                 2.0 * (kLog2 - p.z - softplus(-2.0 * p.z));
    return p;
}

bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

}  // namespace

void KernelScratch::ensure(int n, const neural::Mlp* slot_net) {
    if (static_cast<int>(ws_a.size()) < n) ws_a.resize(n);
    if (static_cast<int>(ws_q.size()) < n) ws_q.resize(n);
    if (static_cast<int>(ws_q2.size()) < n) ws_q2.resize(n);
    if (static_cast<int>(vec_a.size()) < n) vec_a.resize(n);
    if (static_cast<int>(vec_b.size()) < n) vec_b.resize(n);
    if (slot_net) {
        bool rebuild = static_cast<int>(slots.size()) < n ||
                       !same_shape(slot_shape, slot_net->sizes);
        if (rebuild) {
            slots.assign(n, neural::make_grads(*slot_net));
            slot_shape = slot_net->sizes;
        }
    }
}

void policy_batch(const neural::Mlp& actor, const std::vector<double>& obs, int n,
                  int obs_dim, const std::vector<double>& noise, double bound,
                  std::vector<double>& actions, std::vector<double>& log_probs,
                  KernelScratch& scratch) {
    scratch.ensure(n, nullptr);
    actions.resize(n);
    log_probs.resize(n);
    parallel_for(n, [&](int i) {
        auto& x = scratch.vec_a[i];
        x.assign(obs.begin() + static_cast<std::size_t>(i) * obs_dim,
                 obs.begin() + static_cast<std::size_t>(i + 1) * obs_dim);
        auto head = neural::forward_cached(actor, x, scratch.ws_a[i]);
        PolicyEval p = eval_policy(head, noise[i], bound);
        actions[i] = p.u;
        log_probs[i] = p.log_prob;
    });
}

void policy_batch_ref(const neural::Mlp& actor, const std::vector<double>& obs, int n,
                      int obs_dim, const std::vector<double>& noise, double bound,
                      std::vector<double>& actions, std::vector<double>& log_probs) {
    actions.resize(n);
    log_probs.resize(n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> x(obs.begin() + static_cast<std::size_t>(i) * obs_dim,
                              obs.begin() + static_cast<std::size_t>(i + 1) * obs_dim);
        auto head = neural::forward(actor, x);
        PolicyEval p = eval_policy(head, noise[i], bound);
        actions[i] = p.u;
        log_probs[i] = p.log_prob;
    }
}

void q_batch(const neural::Mlp& critic, const std::vector<double>& obs,
             const std::vector<double>& act, int n, int obs_dim, std::vector<double>& q,
             KernelScratch& scratch) {
    scratch.ensure(n, nullptr);
    q.resize(n);
    parallel_for(n, [&](int i) {
        auto& x = scratch.vec_a[i];
        x.assign(obs.begin() + static_cast<std::size_t>(i) * obs_dim,
                 obs.begin() + static_cast<std::size_t>(i + 1) * obs_dim);
        x.push_back(act[i]);
        q[i] = neural::forward_cached(critic, x, scratch.ws_q[i])[0];
    });
}

void q_batch_ref(const neural::Mlp& critic, const std::vector<double>& obs,
                 const std::vector<double>& act, int n, int obs_dim,
                 std::vector<double>& q) {
    q.resize(n);
    for (int i = 0; i < n; ++i) {
        std::vector<double> x(obs.begin() + static_cast<std::size_t>(i) * obs_dim,
                              obs.begin() + static_cast<std::size_t>(i + 1) * obs_dim);
        x.push_back(act[i]);
        q[i] = neural::forward(critic, x)[0];
    }
}

double critic_grad_batch(const neural::Mlp& critic, const Batch& batch,
                         const std::vector<double>& y, neural::Grads& out,
                         KernelScratch& scratch) {
    int n = batch.n;
    scratch.ensure(n, &critic);
    std::vector<double> per_sample_loss(n, 0.0);

    parallel_for(n, [&](int i) {
        auto& x = scratch.vec_a[i];
        x.assign(batch.obs.begin() + static_cast<std::size_t>(i) * batch.obs_dim,
                 batch.obs.begin() + static_cast<std::size_t>(i + 1) * batch.obs_dim);
        x.push_back(batch.act[i]);
        double q = neural::forward_cached(critic, x, scratch.ws_q[i])[0];
        double diff = q - y[i];
        per_sample_loss[i] = diff * diff;
        neural::zero_grads(scratch.slots[i]);
        neural::backward(critic, scratch.ws_q[i], {2.0 * diff / n}, scratch.slots[i],
                         nullptr);
    });

    neural::zero_grads(out);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        neural::accumulate_grads(out, scratch.slots[i]);
        loss += per_sample_loss[i];
    }
    return loss / n;
}

double critic_grad_batch_ref(const neural::Mlp& critic, const Batch& batch,
                             const std::vector<double>& y, neural::Grads& out) {
    int n = batch.n;
    neural::zero_grads(out);
    double loss = 0.0;
    neural::Workspace ws;
    neural::Grads slot = neural::make_grads(critic);
    for (int i = 0; i < n; ++i) {
        std::vector<double> x(batch.obs.begin() + static_cast<std::size_t>(i) * batch.obs_dim,
                              batch.obs.begin() + static_cast<std::size_t>(i + 1) * batch.obs_dim);
        x.push_back(batch.act[i]);
        double q = neural::forward_cached(critic, x, ws)[0];
        double diff = q - y[i];
        loss += diff * diff;
        neural::zero_grads(slot);
        neural::backward(critic, ws, {2.0 * diff / n}, slot, nullptr);
        neural::accumulate_grads(out, slot);
    }
    return loss / n;
}

namespace {

// Shared per-sample body of the actor surrogate. Returns the sample loss and
// accumulates the actor gradient (already scaled by 1/n) into slot.
double actor_sample(const neural::Mlp& actor, const neural::Mlp& q1,
                    const neural::Mlp* q2, const double* obs_row, int obs_dim, double eps,
                    double zeta, double bound, int n, neural::Workspace& ws_a,
                    neural::Workspace& ws_q, neural::Workspace& ws_q2,
                    std::vector<double>& x, std::vector<double>& xq,
                    neural::Grads& slot) {
    x.assign(obs_row, obs_row + obs_dim);
    auto head = neural::forward_cached(actor, x, ws_a);
    PolicyEval p = eval_policy(head, eps, bound);

    xq.assign(obs_row, obs_row + obs_dim);
    xq.push_back(p.u);
    double qa = neural::forward_cached(q1, xq, ws_q)[0];
    const neural::Mlp* active = &q1;
    neural::Workspace* active_ws = &ws_q;
    if (q2) {
        double qb = neural::forward_cached(*q2, xq, ws_q2)[0];
        if (qb < qa) {
            qa = qb;
            active = q2;
            active_ws = &ws_q2;
        }
    }
    double loss = zeta * p.log_prob - qa;

    // d(loss)/du through the frozen critic.
    std::vector<double> xgrad;
    neural::backward_input_only(*active, *active_ws, {-1.0}, xgrad);
    double dloss_du = xgrad[obs_dim];

    // d(loss)/dz: entropy term contributes 2*zeta*tanh(z); the action path
    // contributes dloss_du * bound * (1 - tanh^2 z).
    double th = std::tanh(p.z);
    double dz = 2.0 * zeta * th + dloss_du * bound * (1.0 - th * th);
    double dmu = dz;
    double dls = dz * (p.z - p.mu) - zeta;  // sigma*eps = z - mu
    if (p.ls_clamped) dls = 0.0;

    neural::zero_grads(slot);
    neural::backward(actor, ws_a, {dmu / n, dls / n}, slot, nullptr);
    return loss;
}

}  // namespace

double actor_grad_batch(const neural::Mlp& actor, const neural::Mlp& q1,
                        const neural::Mlp* q2, const std::vector<double>& obs, int n,
                        int obs_dim, const std::vector<double>& noise, double zeta,
                        double bound, neural::Grads& out, KernelScratch& scratch) {
    scratch.ensure(n, &actor);
    std::vector<double> per_sample_loss(n, 0.0);
    parallel_for(n, [&](int i) {
        per_sample_loss[i] = actor_sample(
            actor, q1, q2, obs.data() + static_cast<std::size_t>(i) * obs_dim, obs_dim,
            noise[i], zeta, bound, n, scratch.ws_a[i], scratch.ws_q[i], scratch.ws_q2[i],
            scratch.vec_a[i], scratch.vec_b[i], scratch.slots[i]);
    });
    neural::zero_grads(out);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        neural::accumulate_grads(out, scratch.slots[i]);
        loss += per_sample_loss[i];
    }
    return loss / n;
}

double actor_grad_batch_ref(const neural::Mlp& actor, const neural::Mlp& q1,
                            const neural::Mlp* q2, const std::vector<double>& obs, int n,
                            int obs_dim, const std::vector<double>& noise, double zeta,
                            double bound, neural::Grads& out) {
    neural::Workspace ws_a, ws_q, ws_q2;
    std::vector<double> x, xq;
    neural::Grads slot = neural::make_grads(actor);
    neural::zero_grads(out);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        loss += actor_sample(actor, q1, q2,
                             obs.data() + static_cast<std::size_t>(i) * obs_dim, obs_dim,
                             noise[i], zeta, bound, n, ws_a, ws_q, ws_q2, x, xq, slot);
        neural::accumulate_grads(out, slot);
    }
    return loss / n;
}

}  // namespace fedgrid::sac
