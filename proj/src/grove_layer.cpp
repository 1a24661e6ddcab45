// Copyright 2026 The Grove MoE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "grove/grove_layer.hpp"

#include <cmath>

namespace grove {

std::string to_string(LayerKind kind) { return kind == LayerKind::plain ? "plain" : "grove"; }

LayerKind layer_kind_from_string(const std::string &s) {
    if (s == "plain")
        return LayerKind::plain;
    if (s == "grove")
        return LayerKind::grove;
    throw ConfigError("kind", "expected 'plain' or 'grove', got '" + s + "'");
}

void GroveConfig::validate(LayerKind kind) const {
    if (d == 0)
        throw ConfigError("d", "feature dim must be positive");
    if (n == 0)
        throw ConfigError("n", "expert count must be positive");
    if (m == 0)
        throw ConfigError("m", "expert intermediate dim must be positive");
    if (k < 1 || k > n)
        throw ConfigError("k", "top-k must satisfy 1 <= k <= n (k=" + std::to_string(k) +
                                   ", n=" + std::to_string(n) + ")");
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
        throw ConfigError("alpha", "bias update rate must be finite and non-negative");
    if (!(init_sigma >= 0.0) || !std::isfinite(init_sigma))
        throw ConfigError("init_sigma", "init std must be finite and non-negative");
    if (kind == LayerKind::plain)
        return;
    if (g == 0 || n % g != 0)
        throw ConfigError("g", "group count must divide the expert count (g=" + std::to_string(g) +
                                   ", n=" + std::to_string(n) + ")");
    const double bound = static_cast<double>(g) / static_cast<double>(n);
    if (!(lambda > 0.0 && lambda <= bound))
        throw ConfigError("lambda", "scaling factor must satisfy 0 < lambda <= g/n = " + std::to_string(bound) +
                                        " (lambda=" + std::to_string(lambda) + ")");
}

void GatedFfn::check_shape(std::size_t d, std::size_t hidden_dim) const {
    if (gate.rows() != hidden_dim || gate.cols() != d || up.rows() != hidden_dim || up.cols() != d ||
        down.rows() != d || down.cols() != hidden_dim)
        throw DimensionError("gated ffn shape does not match d=" + std::to_string(d) +
                             ", hidden=" + std::to_string(hidden_dim));
}

GatedFfn GatedFfn::zeros(std::size_t d, std::size_t hidden_dim) {
    return {Matrix(hidden_dim, d), Matrix(hidden_dim, d), Matrix(d, hidden_dim)};
}

void GroveLayer::validate() const {
    config.validate(kind);
    const auto &c = config;
    if (router.weight.rows() != c.n || router.weight.cols() != c.d)
        throw DimensionError("router weight must be n x d");
    if (experts.size() != c.n)
        throw DimensionError("expected " + std::to_string(c.n) + " experts, have " + std::to_string(experts.size()));
    for (const auto &e : experts)
        e.check_shape(c.d, c.m);
    const std::size_t want_adj = is_grove() ? c.g : 0;
    if (adjugates.size() != want_adj)
        throw DimensionError("expected " + std::to_string(want_adj) + " adjugates, have " +
                             std::to_string(adjugates.size()));
    for (const auto &a : adjugates)
        a.check_shape(c.d, c.h);
    if (bias.size() != c.n)
        throw DimensionError("bias must have n entries");
    if (!all_finite(bias))
        throw std::invalid_argument("bias has non-finite entries");
}

Grouping GroveLayer::grouping() const { return is_grove() ? config.grouping() : Grouping{config.n, config.n}; }

double GroveLayer::effective_lambda() const { return is_grove() ? config.lambda : 1.0; }

RoutingDecision GroveLayer::route(std::span<const double> x) const {
    return grove::route(router, bias, x, config.k, effective_lambda(), grouping());
}

RoutingDecision GroveLayer::route_fixed(std::span<const double> x, std::vector<std::size_t> selected) const {
    return decide_with_selection(logits(router, x), std::move(selected), effective_lambda(), grouping());
}

GroveLayer init_layer(const GroveConfig &config, LayerKind kind, Rng &rng) {
    config.validate(kind);
    const auto fan_in = [](std::size_t f) { return 1.0 / std::sqrt(static_cast<double>(f)); };
    GroveLayer layer;
    layer.kind = kind;
    layer.config = config;
    layer.router.weight = normal_init(rng, config.n, config.d, fan_in(config.d));
    layer.experts.reserve(config.n);
    for (std::size_t i = 0; i < config.n; ++i) {
        Expert e;
        e.gate = normal_init(rng, config.m, config.d, fan_in(config.d));
        e.up = normal_init(rng, config.m, config.d, fan_in(config.d));
        e.down = normal_init(rng, config.d, config.m, fan_in(config.m));
        layer.experts.push_back(std::move(e));
    }
    if (kind == LayerKind::grove) {
        layer.adjugates.reserve(config.g);
        for (std::size_t j = 0; j < config.g; ++j) {
            AdjugateExpert a;
            a.gate = normal_init(rng, config.h, config.d, fan_in(config.d));
            a.up = normal_init(rng, config.h, config.d, fan_in(config.d));
            a.down = normal_init(rng, config.d, config.h, fan_in(config.h));
            layer.adjugates.push_back(std::move(a));
        }
    }
    layer.bias.assign(config.n, 0.0);
    return layer;
}

namespace {

struct FfnTrace {
    Vector gate_pre;
    Vector up_pre;
    Vector act; // silu(gate_pre) .* up_pre
    Vector out;
};

FfnTrace ffn_trace(const GatedFfn &e, std::span<const double> x) {
    FfnTrace t;
    t.gate_pre = matvec(e.gate, x);
    t.up_pre = matvec(e.up, x);
    t.act.resize(t.gate_pre.size());
    for (std::size_t i = 0; i < t.act.size(); ++i)
        t.act[i] = silu(t.gate_pre[i]) * t.up_pre[i];
    t.out = matvec(e.down, t.act);
    return t;
}

void check_input(const GroveLayer &layer, std::span<const double> x) {
    if (x.size() != layer.config.d)
        throw DimensionError("token has " + std::to_string(x.size()) + " features, layer expects d=" +
                             std::to_string(layer.config.d));
}

void require_grove(const GroveLayer &layer, const char *op) {
    if (!layer.is_grove())
        throw std::invalid_argument(std::string(op) + ": layer has no adjugate experts");
}

// Backprop through one gated FFN whose output enters y with coefficient `coeff`.
// Weight grads are added into `g` scaled by coeff * outer; the input grad is added
// into `dx` scaled by coeff only.
void ffn_backward(const GatedFfn &e, std::span<const double> x, const FfnTrace &t, std::span<const double> dy,
                  double coeff, double outer, GatedFfn &g, std::span<double> dx) {
    add_outer(g.down, dy, t.act, coeff * outer);
    const Vector d_act = matvec_transposed(e.down, dy);
    Vector d_gate(d_act.size());
    Vector d_up(d_act.size());
    for (std::size_t i = 0; i < d_act.size(); ++i) {
        d_up[i] = coeff * d_act[i] * silu(t.gate_pre[i]);
        d_gate[i] = coeff * d_act[i] * t.up_pre[i] * silu_grad(t.gate_pre[i]);
    }
    add_outer(g.gate, d_gate, x, outer);
    add_outer(g.up, d_up, x, outer);
    axpy(1.0, matvec_transposed(e.gate, d_gate), dx);
    axpy(1.0, matvec_transposed(e.up, d_up), dx);
}

} // namespace

Vector expert_forward(const GatedFfn &e, std::span<const double> x) {
    if (x.size() != e.dim())
        throw DimensionError("expert_forward: input length " + std::to_string(x.size()) + " != d=" +
                             std::to_string(e.dim()));
    return ffn_trace(e, x).out;
}

Vector moe_forward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision) {
    check_input(layer, x);
    Vector y(layer.config.d, 0.0);
    for (std::size_t s = 0; s < decision.selected.size(); ++s)
        axpy(decision.gate_weights[s], expert_forward(layer.experts[decision.selected[s]], x), y);
    return y;
}

Vector moe_forward(const GroveLayer &layer, std::span<const double> x) {
    check_input(layer, x);
    return moe_forward(layer, x, layer.route(x));
}

Vector grove_forward_naive(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision) {
    require_grove(layer, "grove_forward_naive");
    check_input(layer, x);
    const Grouping grouping = layer.grouping();
    const double lambda = layer.config.lambda;
    Vector y(layer.config.d, 0.0);
    for (std::size_t s = 0; s < decision.selected.size(); ++s) {
        const std::size_t i = decision.selected[s];
        Vector e_bar = expert_forward(layer.experts[i], x);
        axpy(lambda, expert_forward(layer.adjugates[grouping.group_of(i)], x), e_bar);
        axpy(decision.gate_weights[s], e_bar, y);
    }
    return y;
}

Vector grove_forward_naive(const GroveLayer &layer, std::span<const double> x) {
    check_input(layer, x);
    return grove_forward_naive(layer, x, layer.route(x));
}

DedupOutput grove_forward_dedup(const GroveLayer &layer, std::span<const double> x,
                                const RoutingDecision &decision) {
    require_grove(layer, "grove_forward_dedup");
    DedupOutput out;
    out.y = moe_forward(layer, x, decision);
    for (const auto &[group, weight] : decision.group_weights)
        axpy(weight, expert_forward(layer.adjugates[group], x), out.y);
    out.stats.n_adjugate_evals = decision.group_weights.size();
    out.stats.group_weights = decision.group_weights;
    out.stats.selected = decision.selected;
    return out;
}

DedupOutput grove_forward_dedup(const GroveLayer &layer, std::span<const double> x) {
    check_input(layer, x);
    return grove_forward_dedup(layer, x, layer.route(x));
}

Vector layer_forward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision) {
    if (layer.is_grove())
        return grove_forward_dedup(layer, x, decision).y;
    return moe_forward(layer, x, decision);
}

Gradients Gradients::zeros_like(const GroveLayer &layer) {
    const auto &c = layer.config;
    Gradients g;
    g.input.assign(c.d, 0.0);
    g.router = Matrix(c.n, c.d);
    g.experts.assign(c.n, GatedFfn::zeros(c.d, c.m));
    g.adjugates.assign(layer.adjugates.size(), GatedFfn::zeros(c.d, c.h));
    return g;
}

void accumulate_backward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision,
                         std::span<const double> upstream, Gradients &acc, double scale) {
    check_input(layer, x);
    if (upstream.size() != layer.config.d)
        throw DimensionError("upstream gradient must have d entries");
    const std::size_t n = layer.config.n;
    const Grouping grouping = layer.grouping();
    const double lambda = layer.is_grove() ? layer.config.lambda : 0.0;
    Vector dx(layer.config.d, 0.0);

    std::map<std::size_t, FfnTrace> adj_traces;
    if (layer.is_grove())
        for (const auto &[group, weight] : decision.group_weights)
            adj_traces.emplace(group, ffn_trace(layer.adjugates[group], x));

    // c_i = <u, E_i(x) + lambda A_j(x)> for selected i; zero elsewhere.
    Vector coeff(n, 0.0);
    for (std::size_t s = 0; s < decision.selected.size(); ++s) {
        const std::size_t i = decision.selected[s];
        const FfnTrace t = ffn_trace(layer.experts[i], x);
        double c = 0.0;
        for (std::size_t r = 0; r < upstream.size(); ++r)
            c += upstream[r] * t.out[r];
        if (layer.is_grove()) {
            const auto &adj_out = adj_traces.at(grouping.group_of(i)).out;
            for (std::size_t r = 0; r < upstream.size(); ++r)
                c += lambda * upstream[r] * adj_out[r];
        }
        coeff[i] = c;
        ffn_backward(layer.experts[i], x, t, upstream, decision.gate_weights[s], scale, acc.experts[i], dx);
    }
    for (const auto &[group, trace] : adj_traces)
        ffn_backward(layer.adjugates[group], x, trace, upstream, decision.group_weights.at(group), scale,
                     acc.adjugates[group], dx);

    // softmax Jacobian: dz = p .* (c - <p, c>)
    const Vector &p = decision.softmax_scores;
    double pc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        pc += p[i] * coeff[i];
    Vector dz(n);
    for (std::size_t i = 0; i < n; ++i)
        dz[i] = p[i] * (coeff[i] - pc);
    add_outer(acc.router, dz, x, scale);
    axpy(1.0, matvec_transposed(layer.router.weight, dz), dx);
    axpy(scale, dx, acc.input);
}

Gradients grove_backward(const GroveLayer &layer, std::span<const double> x, const RoutingDecision &decision,
                         std::span<const double> upstream) {
    Gradients g = Gradients::zeros_like(layer);
    accumulate_backward(layer, x, decision, upstream, g);
    return g;
}

Gradients grove_backward(const GroveLayer &layer, std::span<const double> x, std::span<const double> upstream) {
    check_input(layer, x);
    return grove_backward(layer, x, layer.route(x), upstream);
}

BatchResult batch_forward(const GroveLayer &layer, std::span<const Vector> tokens, ForwardMode mode) {
    BatchResult r;
    r.load.assign(layer.config.n, 0.0);
    r.outputs.reserve(tokens.size());
    r.stats.reserve(tokens.size());
    r.decisions.reserve(tokens.size());
    const double share = 1.0 / static_cast<double>(layer.config.k);
    for (const auto &x : tokens) {
        check_input(layer, x);
        RoutingDecision decision = layer.route(x);
        DedupStats stats;
        if (!layer.is_grove()) {
            r.outputs.push_back(moe_forward(layer, x, decision));
            stats.selected = decision.selected;
        } else if (mode == ForwardMode::naive) {
            r.outputs.push_back(grove_forward_naive(layer, x, decision));
            stats.n_adjugate_evals = decision.selected.size(); // one per selected expert
            stats.group_weights = decision.group_weights;
            stats.selected = decision.selected;
        } else {
            auto out = grove_forward_dedup(layer, x, decision);
            r.outputs.push_back(std::move(out.y));
            stats = std::move(out.stats);
        }
        for (std::size_t i : decision.selected)
            r.load[i] += share;
        r.stats.push_back(std::move(stats));
        r.decisions.push_back(std::move(decision));
    }
    if (!tokens.empty())
        for (auto &f : r.load)
            f /= static_cast<double>(tokens.size());
    return r;
}

} // namespace grove
