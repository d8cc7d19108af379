#include "fedgrid/neural.hpp"

#include <cmath>
#include <string>

#include "fedgrid/util.hpp"

namespace fedgrid::neural {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

double softplus(double x) {
    // log(1 + e^x) without overflow for large |x|.
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double clamp_log_std(double ls) {
    return ls < kLogStdMin ? kLogStdMin : (ls > kLogStdMax ? kLogStdMax : ls);
}

}  // namespace

double glorot_bound(int fan_in, int fan_out) {
    return std::sqrt(6.0 / (fan_in + fan_out));
}

Mlp make_mlp(const std::vector<int>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2)
        throw ConfigError("mlp needs at least an input and an output layer");
    for (int s : sizes)
        if (s <= 0) throw ConfigError("mlp layer width must be positive");

    Mlp net;
    net.sizes = sizes;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        int in = sizes[l], out = sizes[l + 1];
        double bound = glorot_bound(in, out);
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> w(static_cast<std::size_t>(out) * in);
        for (double& x : w) x = dist(rng);
        net.w.push_back(std::move(w));
        net.b.emplace_back(out, 0.0);
    }
    return net;
}

std::size_t param_count(const Mlp& net) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < net.w.size(); ++l) n += net.w[l].size() + net.b[l].size();
    return n;
}

Grads make_grads(const Mlp& net) {
    Grads g;
    g.w.reserve(net.w.size());
    g.b.reserve(net.b.size());
    for (std::size_t l = 0; l < net.w.size(); ++l) {
        g.w.emplace_back(net.w[l].size(), 0.0);
        g.b.emplace_back(net.b[l].size(), 0.0);
    }
    return g;
}

void zero_grads(Grads& g) {
    for (auto& v : g.w) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : g.b) std::fill(v.begin(), v.end(), 0.0);
}

void accumulate_grads(Grads& dst, const Grads& src) {
    for (std::size_t l = 0; l < dst.w.size(); ++l) {
        for (std::size_t i = 0; i < dst.w[l].size(); ++i) dst.w[l][i] += src.w[l][i];
        for (std::size_t i = 0; i < dst.b[l].size(); ++i) dst.b[l][i] += src.b[l][i];
    }
}

namespace {

void check_input_dim(const Mlp& net, const std::vector<double>& in) {
    if (static_cast<int>(in.size()) != net.input_dim())
        throw ConfigError("mlp input has dimension " + std::to_string(in.size()) +
                          ", expected " + std::to_string(net.input_dim()));
}

// y = W x + b for one layer.
void affine(const std::vector<double>& w, const std::vector<double>& b,
            const std::vector<double>& x, std::vector<double>& y) {
    std::size_t out = b.size(), in = x.size();
    y.resize(out);
    for (std::size_t r = 0; r < out; ++r) {
        double acc = b[r];
        const double* row = w.data() + r * in;
        for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

}  // namespace

std::vector<double> forward(const Mlp& net, const std::vector<double>& in) {
    check_input_dim(net, in);
    std::vector<double> cur = in, next;
    int last = net.num_layers() - 1;
    for (int l = 0; l <= last; ++l) {
        affine(net.w[l], net.b[l], cur, next);
        if (l < last)
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        cur.swap(next);
    }
    return cur;
}

std::vector<double> forward_cached(const Mlp& net, const std::vector<double>& in,
                                   Workspace& ws) {
    check_input_dim(net, in);
    int layers = net.num_layers();
    ws.pre.resize(layers);
    ws.act.resize(layers);
    ws.in = in;
    const std::vector<double>* x = &ws.in;
    for (int l = 0; l < layers; ++l) {
        affine(net.w[l], net.b[l], *x, ws.pre[l]);
        ws.act[l] = ws.pre[l];
        if (l < layers - 1)
            for (double& v : ws.act[l]) v = v > 0.0 ? v : 0.0;
        x = &ws.act[l];
    }
    return ws.act.back();
}

void backward(const Mlp& net, const Workspace& ws, const std::vector<double>& out_grad,
              Grads& g, std::vector<double>* in_grad) {
    int layers = net.num_layers();
    if (static_cast<int>(out_grad.size()) != net.output_dim())
        throw ConfigError("backward: out_grad dimension mismatch");

    std::vector<double> delta = out_grad, prev_delta;
    for (int l = layers - 1; l >= 0; --l) {
        const std::vector<double>& x = (l == 0) ? ws.in : ws.act[l - 1];
        std::size_t out = net.b[l].size(), in = x.size();
        // dL/dW = delta (x) x^T, dL/db = delta
        for (std::size_t r = 0; r < out; ++r) {
            double d = delta[r];
            g.b[l][r] += d;
            double* wrow = g.w[l].data() + r * in;
            for (std::size_t c = 0; c < in; ++c) wrow[c] += d * x[c];
        }
        if (l == 0 && in_grad == nullptr) break;
        // dL/dx = W^T delta, gated by the ReLU mask of the layer below.
        prev_delta.assign(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            double d = delta[r];
            const double* wrow = net.w[l].data() + r * in;
            for (std::size_t c = 0; c < in; ++c) prev_delta[c] += wrow[c] * d;
        }
        if (l > 0) {
            const std::vector<double>& pre = ws.pre[l - 1];
            for (std::size_t c = 0; c < in; ++c)
                if (pre[c] <= 0.0) prev_delta[c] = 0.0;
            delta.swap(prev_delta);
        } else {
            *in_grad = prev_delta;
        }
    }
}

void backward_input_only(const Mlp& net, const Workspace& ws,
                         const std::vector<double>& out_grad, std::vector<double>& in_grad) {
    int layers = net.num_layers();
    if (static_cast<int>(out_grad.size()) != net.output_dim())
        throw ConfigError("backward_input_only: out_grad dimension mismatch");

    std::vector<double> delta = out_grad, prev_delta;
    for (int l = layers - 1; l >= 0; --l) {
        std::size_t in = (l == 0) ? ws.in.size() : ws.act[l - 1].size();
        std::size_t out = net.b[l].size();
        prev_delta.assign(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            double d = delta[r];
            const double* wrow = net.w[l].data() + r * in;
            for (std::size_t c = 0; c < in; ++c) prev_delta[c] += wrow[c] * d;
        }
        if (l > 0) {
            const std::vector<double>& pre = ws.pre[l - 1];
            for (std::size_t c = 0; c < in; ++c)
                if (pre[c] <= 0.0) prev_delta[c] = 0.0;
            delta.swap(prev_delta);
        } else {
            in_grad = prev_delta;
        }
    }
}

Adam make_adam(const Mlp& net) {
    Adam opt;
    opt.m = make_grads(net);
    opt.v = make_grads(net);
    return opt;
}

namespace {

void adam_block(std::vector<double>& p, const std::vector<double>& g,
                std::vector<double>& m, std::vector<double>& v, double lr,
                double b1, double b2, double eps, double bc1, double bc2,
                const std::string& block_name) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        double gi = g[i];
        if (!std::isfinite(gi))
            throw RuntimeError("non-finite gradient in " + block_name);
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace

void adam_step(Mlp& net, const Grads& g, Adam& opt, double lr) {
    if (g.w.size() != net.w.size())
        throw ConfigError("adam_step: gradient/parameter shape mismatch");
    opt.step += 1;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t l = 0; l < net.w.size(); ++l) {
        std::string tag = "layer " + std::to_string(l);
        adam_block(net.w[l], g.w[l], opt.m.w[l], opt.v.w[l], lr, opt.beta1, opt.beta2,
                   opt.eps, bc1, bc2, tag + " weights");
        adam_block(net.b[l], g.b[l], opt.m.b[l], opt.v.b[l], lr, opt.beta1, opt.beta2,
                   opt.eps, bc1, bc2, tag + " biases");
    }
}

SquashResult squashed_gaussian(const std::vector<double>& mean,
                               const std::vector<double>& log_std,
                               const std::vector<double>& noise) {
    if (mean.size() != log_std.size() || mean.size() != noise.size())
        throw ConfigError("squashed_gaussian: mean/log_std/noise dimension mismatch");

    SquashResult res;
    res.action.resize(mean.size());
    const double kLog2 = 0.6931471805599453;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        double ls = clamp_log_std(log_std[i]);
        double z = mean[i] + std::exp(ls) * noise[i];
        double a = std::tanh(z);
        // Keep the squashed action strictly inside (-1, 1); tanh rounds to
        // +/-1 in double precision for |z| above ~19.
        const double interior = std::nextafter(1.0, 0.0);
        if (a >= 1.0) a = interior;
        if (a <= -1.0) a = -interior;
        res.action[i] = a;
        // log N(z; mean, sigma) with z = mean + sigma*eps reduces to
        // -0.5*eps^2 - 0.5*log(2*pi) - log_std.
        double log_gauss = -0.5 * noise[i] * noise[i] - kHalfLog2Pi - ls;
        double log_tanh_corr = 2.0 * (kLog2 - z - softplus(-2.0 * z));
        res.log_prob += log_gauss - log_tanh_corr;
    }
    return res;
}

}  // namespace fedgrid::neural
