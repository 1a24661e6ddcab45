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

#include "grove/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace grove {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += a[i] * b[i];
    return s;
}

struct Probe {
    GroveLayer &work;
    Vector x;
    Vector upstream;
    std::vector<std::size_t> selected;

    double loss() const {
        return dot(upstream, layer_forward(work, x, work.route_fixed(x, selected)));
    }
};

class Tally {
public:
    explicit Tally(const GradCheckOptions &opt) : opt_(opt) {}

    void add(const std::string &group, double analytic, double numeric) {
        const double denom = std::max({std::abs(analytic), std::abs(numeric), opt_.floor});
        auto &e = errors_[group];
        e.group = group;
        e.max_rel_error = std::max(e.max_rel_error, std::abs(analytic - numeric) / denom);
        ++e.checked;
    }

    void fail(const std::string &group) {
        auto &e = errors_[group];
        e.group = group;
        e.max_rel_error = std::numeric_limits<double>::infinity();
        ++e.checked;
    }

    std::vector<GroupError> take() const {
        std::vector<GroupError> out;
        for (const auto &[name, e] : errors_)
            out.push_back(e);
        return out;
    }

private:
    const GradCheckOptions &opt_;
    std::map<std::string, GroupError> errors_;
};

std::vector<std::size_t> pick_entries(std::size_t size, std::size_t limit, Rng &rng) {
    std::vector<std::size_t> idx;
    if (limit == 0 || size <= limit) {
        idx.resize(size);
        for (std::size_t i = 0; i < size; ++i)
            idx[i] = i;
        return idx;
    }
    idx.reserve(limit);
    for (std::size_t i = 0; i < limit; ++i)
        idx.push_back(static_cast<std::size_t>(rng.below(size)));
    return idx;
}

double central_difference(const Probe &probe, double &slot, double step) {
    const double saved = slot;
    slot = saved + step;
    const double up = probe.loss();
    slot = saved - step;
    const double down = probe.loss();
    slot = saved;
    return (up - down) / (2.0 * step);
}

void check_tensor(const Probe &probe, Matrix &param, const Matrix &analytic, const std::string &group, Tally &tally,
                  Rng &rng, const GradCheckOptions &opt) {
    auto p = param.data();
    const auto a = analytic.data();
    for (std::size_t e : pick_entries(p.size(), opt.max_entries_per_tensor, rng))
        tally.add(group, a[e], central_difference(probe, p[e], opt.step));
}

bool is_zero(const GatedFfn &g) {
    const auto zero = [](const Matrix &m) {
        return std::all_of(m.data().begin(), m.data().end(), [](double v) { return v == 0.0; });
    };
    return zero(g.gate) && zero(g.up) && zero(g.down);
}

} // namespace

GradCheckReport gradcheck(const GroveLayer &layer, std::size_t probes, Rng &rng, const GradCheckOptions &opt,
                          const BackwardFn &backward) {
    if (probes < 1)
        throw std::invalid_argument("gradcheck: probes must be >= 1");
    layer.validate();
    const BackwardFn run_backward =
        backward ? backward
                 : BackwardFn([](const GroveLayer &l, std::span<const double> x, const RoutingDecision &d,
                                 std::span<const double> u) { return grove_backward(l, x, d, u); });
    GroveLayer work = layer;
    Tally tally(opt);
    const std::size_t d = layer.config.d;

    for (std::size_t p = 0; p < probes; ++p) {
        Probe probe{work, normal_vector(rng, d), normal_vector(rng, d), {}};
        const RoutingDecision decision = layer.route(probe.x);
        probe.selected = decision.selected;
        const Gradients g = run_backward(layer, probe.x, decision, probe.upstream);

        check_tensor(probe, work.router.weight, g.router, "router", tally, rng, opt);
        std::vector<bool> expert_touched(layer.experts.size(), false);
        for (std::size_t i : decision.selected) {
            expert_touched[i] = true;
            check_tensor(probe, work.experts[i].gate, g.experts[i].gate, "experts.gate", tally, rng, opt);
            check_tensor(probe, work.experts[i].up, g.experts[i].up, "experts.up", tally, rng, opt);
            check_tensor(probe, work.experts[i].down, g.experts[i].down, "experts.down", tally, rng, opt);
        }
        std::vector<bool> adj_touched(layer.adjugates.size(), false);
        if (layer.is_grove()) {
            for (const auto &[j, w] : decision.group_weights) {
                adj_touched[j] = true;
                check_tensor(probe, work.adjugates[j].gate, g.adjugates[j].gate, "adjugates.gate", tally, rng, opt);
                check_tensor(probe, work.adjugates[j].up, g.adjugates[j].up, "adjugates.up", tally, rng, opt);
                check_tensor(probe, work.adjugates[j].down, g.adjugates[j].down, "adjugates.down", tally, rng, opt);
            }
        }
        for (std::size_t i = 0; i < d; ++i)
            tally.add("input", g.input[i], central_difference(probe, probe.x[i], opt.step));

        for (std::size_t i = 0; i < layer.experts.size(); ++i)
            if (!expert_touched[i] && !is_zero(g.experts[i]))
                tally.fail("untouched");
        for (std::size_t j = 0; j < layer.adjugates.size(); ++j)
            if (!adj_touched[j] && !is_zero(g.adjugates[j]))
                tally.fail("untouched");
    }

    GradCheckReport report;
    report.groups = tally.take();
    report.probes = probes;
    for (const auto &e : report.groups)
        report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.passed = report.max_rel_error < opt.tolerance;
    return report;
}

} // namespace grove
