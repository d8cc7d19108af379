#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedgrid::neural {

// Fully connected network with ReLU hidden layers and a linear output layer.
// Weights are row-major (out x in); all math is double precision so training
// runs are bitwise reproducible.
struct Mlp {
    std::vector<int> sizes;                   // layer widths, input first
    std::vector<std::vector<double>> w;       // per layer, out*in row-major
    std::vector<std::vector<double>> b;       // per layer, out

    int num_layers() const { return static_cast<int>(w.size()); }
    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
};

// Gradient (or moment) storage with the same shape as an Mlp.
struct Grads {
    std::vector<std::vector<double>> w;
    std::vector<std::vector<double>> b;
};

// Forward-pass scratch: pre-activations and activations per layer, kept so
// backward() can replay the ReLU mask without recomputing.
struct Workspace {
    std::vector<std::vector<double>> pre;     // per layer, before ReLU
    std::vector<std::vector<double>> act;     // per layer, after ReLU
    std::vector<double> in;                   // copy of the input
};

Mlp make_mlp(const std::vector<int>& sizes, std::uint64_t seed);
std::size_t param_count(const Mlp& net);

Grads make_grads(const Mlp& net);
void zero_grads(Grads& g);
void accumulate_grads(Grads& dst, const Grads& src);

std::vector<double> forward(const Mlp& net, const std::vector<double>& in);
// Forward pass that records layer activations into ws for a later backward().
std::vector<double> forward_cached(const Mlp& net, const std::vector<double>& in,
                                   Workspace& ws);

// Backprop of out_grad through the cached pass. Accumulates parameter
// gradients into g (callers zero it when needed); writes d(loss)/d(input)
// into in_grad when non-null.
void backward(const Mlp& net, const Workspace& ws, const std::vector<double>& out_grad,
              Grads& g, std::vector<double>* in_grad);

// Input gradient only — skips parameter-gradient accumulation. Used where a
// frozen network shapes the loss of another (critic -> actor).
void backward_input_only(const Mlp& net, const Workspace& ws,
                         const std::vector<double>& out_grad, std::vector<double>& in_grad);

// Adam optimizer state for one Mlp.
struct Adam {
    Grads m;                                  // first moment
    Grads v;                                  // second moment
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

Adam make_adam(const Mlp& net);
// One Adam update in place. Throws RuntimeError naming the parameter block if
// a non-finite gradient shows up.
void adam_step(Mlp& net, const Grads& g, Adam& opt, double lr);

// Squashed-Gaussian policy head: action = tanh(mean + exp(log_std) * noise),
// with the numerically stable tanh log-density correction
// log(1 - tanh^2(x)) = 2*(log 2 - x - softplus(-2x)).
struct SquashResult {
    std::vector<double> action;               // strictly inside (-1, 1)
    double log_prob = 0.0;                    // summed over action dims
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

SquashResult squashed_gaussian(const std::vector<double>& mean,
                               const std::vector<double>& log_std,
                               const std::vector<double>& noise);

// Uniform Glorot init bound for a layer, exposed for tests.
double glorot_bound(int fan_in, int fan_out);

}  // namespace fedgrid::neural
