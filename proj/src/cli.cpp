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

#include "grove/cli.hpp"

#include "grove/accounting.hpp"
#include "grove/checkpoint.hpp"
#include "grove/config_io.hpp"
#include "grove/gradcheck.hpp"
#include "grove/load_balance.hpp"
#include "grove/toy_training.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

namespace grove::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Residual above which an upcycled layer no longer counts as function preserving.
constexpr double kUpcycleTolerance = 1e-12;
constexpr std::size_t kUpcycleProbes = 16;

struct Options {
    std::string config;
    std::string ckpt;
    std::string out;
    std::string format = "csv";
    std::string stats_format = "json";
    std::string dtype = "f64";
    std::string mode = "dedup";
    std::optional<std::uint64_t> seed;
    std::size_t forward_samples = 4;
    std::size_t routing_samples = 100000;
    std::size_t balance_steps = 20000;
    std::size_t train_steps = 200;
    std::size_t probes = 10;
    std::size_t entries = 64;
    std::size_t balance_batch = 128;
    std::size_t train_batch = 64;
    std::size_t hot = 16;
    double skew = 2.0;
    std::optional<double> alpha;
    double ema_decay = 0.9;
    double learning_rate = 1.0;
    bool resample = false;
    // upcycle overrides
    std::optional<std::size_t> groups;
    std::optional<std::size_t> adj_dim;
    std::optional<double> lambda;
    std::optional<double> sigma;
};

/// Opens `path` for writing, creating parent directories.
std::ofstream open_output(const fs::path &path) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw CheckpointError(CheckpointErrc::io, "cannot open " + path.string() + " for writing");
    return os;
}

/// Writes `text` to `path`, or to `out` when path is empty.
void emit(const std::string &path, const std::string &text, std::ostream &out) {
    if (path.empty()) {
        out << text;
        return;
    }
    auto os = open_output(path);
    os << text;
    if (!os)
        throw CheckpointError(CheckpointErrc::io, "write to " + path + " failed");
}

void require(bool ok, const std::string &field, const std::string &what) {
    if (!ok)
        throw ConfigError(field, what);
}

GroveLayer layer_from(const Options &o) {
    require(!o.ckpt.empty() || !o.config.empty(), "--ckpt", "either --ckpt or --config is required");
    if (!o.ckpt.empty())
        return load(o.ckpt);
    LayerSpec spec = load_layer_spec(o.config);
    if (o.seed)
        spec.config.seed = *o.seed;
    Rng rng(spec.config.seed);
    return init_layer(spec.config, spec.kind, rng);
}

Dtype parse_dtype(const std::string &s) {
    require(s == "f64" || s == "f32", "--dtype", "expected f32 or f64");
    return s == "f32" ? Dtype::f32 : Dtype::f64;
}

int cmd_init(const Options &o, std::ostream &out) {
    require(!o.config.empty(), "--config", "required");
    require(!o.out.empty(), "--out", "required");
    LayerSpec spec = load_layer_spec(o.config);
    if (o.seed)
        spec.config.seed = *o.seed;
    Rng rng(spec.config.seed);
    const GroveLayer layer = init_layer(spec.config, spec.kind, rng);
    save(layer, o.out, parse_dtype(o.dtype));
    out << fmt::format("wrote {} layer to {}\n", to_string(layer.kind), o.out);
    return kOk;
}

int cmd_upcycle(const Options &o, std::ostream &out) {
    require(!o.ckpt.empty(), "--ckpt", "source checkpoint required");
    require(!o.out.empty(), "--out", "required");
    const GroveLayer source = load(o.ckpt);
    require(!source.is_grove(), "--ckpt", "source must be a plain MoE checkpoint");

    UpcycleOptions up;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in)
            throw CheckpointError(CheckpointErrc::io, "cannot open config file " + o.config);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error &e) {
            throw ConfigError("config", std::string("malformed JSON: ") + e.what());
        }
        require(j.is_object(), "config", "expected a JSON object");
        for (const auto &[key, v] : j.items())
            require(key == "g" || key == "h" || key == "lambda" || key == "init_sigma" || key == "seed", key,
                    "not an upcycle override (allowed: g, h, lambda, init_sigma, seed)");
        GroveConfig c;
        c.g = up.g;
        c.h = up.h;
        c.lambda = up.lambda;
        c.init_sigma = up.init_sigma;
        c.seed = up.seed;
        c = config_from_json(j, c);
        up = {c.g, c.h, c.lambda, c.init_sigma, c.seed};
    }
    if (o.groups)
        up.g = *o.groups;
    if (o.adj_dim)
        up.h = *o.adj_dim;
    if (o.lambda)
        up.lambda = *o.lambda;
    if (o.sigma)
        up.init_sigma = *o.sigma;
    if (o.seed)
        up.seed = *o.seed;

    const GroveLayer grove = upcycle(source, up);
    save(grove, o.out, parse_dtype(o.dtype));

    Rng probe_rng(up.seed ^ 0x5eedULL);
    double residual = 0.0;
    bool routing_same = true;
    for (std::size_t p = 0; p < kUpcycleProbes; ++p) {
        const Vector x = normal_vector(probe_rng, source.config.d);
        const RoutingDecision before = source.route(x);
        const RoutingDecision after = grove.route(x);
        routing_same = routing_same && before.selected == after.selected && before.gate_weights == after.gate_weights;
        const Vector y_moe = moe_forward(source, x, before);
        const Vector y_grove = grove_forward_dedup(grove, x, after).y;
        for (std::size_t r = 0; r < y_moe.size(); ++r)
            residual = std::max(residual, std::abs(y_grove[r] - y_moe[r]));
    }
    out << fmt::format("wrote grove layer to {}\n", o.out);
    out << fmt::format("function-preservation residual over {} probes: {:.3e}\n", kUpcycleProbes, residual);
    out << fmt::format("routing decisions identical: {}\n", routing_same ? "yes" : "no");
    return residual <= kUpcycleTolerance && routing_same ? kOk : kCheckFailure;
}

int cmd_forward(const Options &o, std::ostream &out) {
    const GroveLayer layer = layer_from(o);
    require(o.forward_samples >= 1, "--samples", "must be >= 1");
    require(o.mode == "dedup" || o.mode == "naive", "--mode", "expected dedup or naive");
    require(o.format == "csv" || o.format == "json", "--format", "expected csv or json");
    Rng rng(o.seed.value_or(0));
    std::vector<Vector> tokens;
    for (std::size_t t = 0; t < o.forward_samples; ++t)
        tokens.push_back(normal_vector(rng, layer.config.d));
    const BatchResult r =
        batch_forward(layer, tokens, o.mode == "naive" ? ForwardMode::naive : ForwardMode::dedup);

    std::ostringstream text;
    if (o.format == "json") {
        json rows = json::array();
        for (std::size_t t = 0; t < tokens.size(); ++t)
            rows.push_back({{"token", t},
                            {"selected", r.decisions[t].selected},
                            {"gate_weights", r.decisions[t].gate_weights},
                            {"n_adjugate_evals", r.stats[t].n_adjugate_evals},
                            {"y", r.outputs[t]}});
        text << json{{"outputs", rows}, {"load", r.load}}.dump(2) << '\n';
    } else {
        text << "token,n_adjugate_evals,selected";
        for (std::size_t c = 0; c < layer.config.d; ++c)
            text << ",y" << c;
        text << '\n';
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            text << t << ',' << r.stats[t].n_adjugate_evals << ','
                 << fmt::format("{}", fmt::join(r.decisions[t].selected, " "));
            for (double v : r.outputs[t])
                text << fmt::format(",{:.17g}", v);
            text << '\n';
        }
    }
    emit(o.out, text.str(), out);
    return kOk;
}

int cmd_simulate_routing(const Options &o, std::ostream &out) {
    require(!o.out.empty(), "--out", "output directory required");
    require(o.routing_samples >= 1, "--samples", "must be >= 1");
    const GroveLayer layer = layer_from(o);
    Rng rng(o.seed.value_or(0));
    const ActivationReport report = routing_histogram(layer, gaussian_tokens(layer.config.d), o.routing_samples, rng);

    std::ostringstream report_json;
    write_report_json(report_json, report, layer.config);
    emit((fs::path(o.out) / "report.json").string(), report_json.str(), out);
    std::ostringstream hist;
    write_histogram_csv(hist, report);
    emit((fs::path(o.out) / "histogram.csv").string(), hist.str(), out);

    out << fmt::format("tokens: {}  mean adjugate evals: {:.4f}  (uniform oracle {:.4f})  saving vs k: {:.2f}%\n",
                       report.samples, report.mean_adjugate_evals,
                       expected_distinct_groups(layer.config.n, layer.config.g, layer.config.k),
                       100.0 * report.adjugate_saving(layer.config.k));
    out << fmt::format("active params per token: min {} max {} mean {:.1f}\n", report.min_active_params,
                       report.max_active_params, report.mean_active_params);
    if (report.bound_violations > 0) {
        out << fmt::format("bound violations: {}\n", report.bound_violations);
        return kCheckFailure;
    }
    return kOk;
}

int cmd_simulate_balance(const Options &o, std::ostream &out) {
    require(o.balance_steps >= 1, "--steps", "must be >= 1");
    require(o.format == "csv" || o.format == "json", "--format", "expected csv or json");
    GroveConfig c;
    if (!o.config.empty())
        c = load_layer_spec(o.config, false).config;
    require(c.k >= 1 && c.k <= c.n, "k", "must satisfy 1 <= k <= n");
    require(o.balance_batch >= 1, "--batch", "must be >= 1");

    SkewedLogitScenario scenario;
    scenario.n = c.n;
    scenario.d = c.d;
    scenario.batch = o.balance_batch;
    scenario.hot = o.hot;
    scenario.skew = o.skew;
    scenario.resample = o.resample;
    BalanceSimConfig sim;
    sim.n = c.n;
    sim.k = c.k;
    sim.alpha = o.alpha.value_or(c.alpha);
    sim.ema_decay = o.ema_decay;
    sim.steps = o.balance_steps;
    sim.seed = o.seed.value_or(c.seed);
    if (o.seed)
        scenario.scenario_seed = *o.seed;
    const BalanceTrajectory traj = simulate_balance(sim, scenario.source());

    std::ostringstream text;
    if (o.format == "json") {
        json steps = json::array();
        for (const auto &s : traj.steps)
            steps.push_back({{"step", s.step},
                             {"max_violation", s.metrics.max_violation},
                             {"rms_violation", s.metrics.rms_violation}});
        text << json{{"alpha", sim.alpha}, {"steps", steps}, {"final_bias", traj.final_bias}}.dump(2) << '\n';
    } else {
        write_trajectory_csv(text, traj);
    }
    emit(o.out, text.str(), out);
    if (!o.out.empty()) {
        const auto &first = traj.steps.front().metrics;
        const auto &last = traj.steps.back().metrics;
        out << fmt::format("max_violation: initial {:.6g} final {:.6g} (ratio {:.4g})\n", first.max_violation,
                           last.max_violation,
                           first.max_violation > 0 ? last.max_violation / first.max_violation : 0.0);
    }
    return kOk;
}

int cmd_gradcheck(const Options &o, std::ostream &out) {
    require(o.probes >= 1, "--probes", "must be >= 1");
    const GroveLayer layer = layer_from(o);
    Rng rng(o.seed.value_or(0));
    GradCheckOptions gopt;
    gopt.max_entries_per_tensor = o.entries;
    const GradCheckReport report = gradcheck(layer, o.probes, rng, gopt);

    json groups = json::array();
    for (const auto &g : report.groups) {
        out << fmt::format("{:<16} checked {:>8}  max rel error {:.3e}\n", g.group, g.checked, g.max_rel_error);
        groups.push_back({{"group", g.group}, {"checked", g.checked}, {"max_rel_error", g.max_rel_error}});
    }
    out << fmt::format("gradcheck {}: max relative error {:.3e} (tolerance {:.0e}) over {} probes\n",
                       report.passed ? "PASS" : "FAIL", report.max_rel_error, gopt.tolerance, report.probes);
    if (!o.out.empty())
        emit(o.out,
             json{{"probes", report.probes},
                  {"step", gopt.step},
                  {"tolerance", gopt.tolerance},
                  {"max_rel_error", report.max_rel_error},
                  {"passed", report.passed},
                  {"groups", groups}}
                     .dump(2) +
                 "\n",
             out);
    return report.passed ? kOk : kCheckFailure;
}

int cmd_train_toy(const Options &o, std::ostream &out) {
    require(!o.out.empty(), "--out", "output directory required");
    require(o.train_steps >= 1, "--steps", "must be >= 1");
    GroveLayer layer = layer_from(o);
    ToyTrainOptions t;
    t.steps = o.train_steps;
    t.batch = o.train_batch;
    t.learning_rate = o.learning_rate;
    t.ema_decay = o.ema_decay;
    t.seed = o.seed.value_or(0);
    const ToyTrainResult result = train_toy(std::move(layer), t);

    std::ostringstream loss;
    write_loss_csv(loss, result.log);
    emit((fs::path(o.out) / "loss.csv").string(), loss.str(), out);
    const fs::path final_path = fs::path(o.out) / "final.ckpt";
    save(result.layer, final_path, parse_dtype(o.dtype));
    out << fmt::format("loss: step 0 {:.6g}  step {} {:.6g}\n", result.log.front().loss, result.log.back().step,
                       result.log.back().loss);
    out << fmt::format("wrote {}\n", final_path.string());
    return kOk;
}

int cmd_stats(const Options &o, std::ostream &out) {
    require(o.stats_format == "csv" || o.stats_format == "json", "--format", "expected csv or json");
    GroveConfig c;
    LayerKind kind = LayerKind::grove;
    if (!o.ckpt.empty()) {
        const GroveLayer layer = load(o.ckpt);
        c = layer.config;
        kind = layer.kind;
    } else {
        require(!o.config.empty(), "--ckpt", "either --ckpt or --config is required");
        const LayerSpec spec = load_layer_spec(o.config);
        c = spec.config;
        kind = spec.kind;
    }
    const ConditionalParams p = conditional_params(c);
    std::vector<std::pair<std::string, json>> rows{
        {"kind", to_string(kind)},
        {"per_expert_params", p.per_expert},
        {"router_params", p.router},
        {"total_expert_params", p.per_expert * c.n},
        {"plain_active_params", p.per_expert * c.k},
        {"plain_flops_per_token", 2 * p.per_expert * c.k},
    };
    if (kind == LayerKind::grove) {
        const AdjugateBound b = adjugate_eval_bound(c);
        const double expected = expected_distinct_groups(c.n, c.g, c.k);
        rows.insert(rows.end(), {
                                    {"per_adjugate_params", p.per_adjugate},
                                    {"total_adjugate_params", p.per_adjugate * c.g},
                                    {"adjugate_evals_min", b.lo},
                                    {"adjugate_evals_max", b.hi},
                                    {"min_active_params", active_params(c, b.lo)},
                                    {"max_active_params", active_params(c, b.hi)},
                                    {"min_flops_per_token", flops_per_token(c, b.lo)},
                                    {"max_flops_per_token", flops_per_token(c, b.hi)},
                                    {"naive_flops_per_token", 2 * (p.per_expert + p.per_adjugate) * c.k},
                                    {"expected_adjugate_evals_uniform", expected},
                                    {"expected_adjugate_saving_uniform", 1.0 - expected / double(c.k)},
                                });
    }
    std::ostringstream text;
    if (o.stats_format == "json") {
        json j = json::object();
        for (const auto &[k, v] : rows)
            j[k] = v;
        j["config"] = config_to_json(c);
        text << j.dump(2) << '\n';
    } else {
        text << "key,value\n";
        for (const auto &[k, v] : rows)
            text << k << ',' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
    }
    emit(o.out, text.str(), out);
    return kOk;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"Grove MoE layer toolkit: init, upcycle, simulate, verify"};
    app.require_subcommand(1);
    Options o;

    const auto add_seed = [&](CLI::App *sub) { sub->add_option("--seed", o.seed, "seed for stochastic components"); };
    const auto add_out = [&](CLI::App *sub, const std::string &what) { sub->add_option("--out", o.out, what); };
    const auto add_source = [&](CLI::App *sub) {
        sub->add_option("--ckpt", o.ckpt, "checkpoint to load");
        sub->add_option("--config", o.config, "JSON config to build a random layer from");
    };

    auto *init = app.add_subcommand("init", "write a randomly initialised checkpoint");
    init->add_option("--config", o.config, "JSON layer config")->required();
    add_out(init, "checkpoint path");
    init->add_option("--dtype", o.dtype, "f64 or f32");
    add_seed(init);

    auto *upc = app.add_subcommand("upcycle", "turn a plain MoE checkpoint into a function-preserving grove layer");
    upc->add_option("--ckpt", o.ckpt, "plain MoE checkpoint")->required();
    upc->add_option("--config", o.config, "JSON overrides (g, h, lambda, init_sigma, seed)");
    add_out(upc, "grove checkpoint path");
    upc->add_option("--groups", o.groups, "group count g");
    upc->add_option("--adj-dim", o.adj_dim, "adjugate intermediate dim h");
    upc->add_option("--lambda", o.lambda, "adjugate scaling factor");
    upc->add_option("--sigma", o.sigma, "std of adjugate gate/up init");
    upc->add_option("--dtype", o.dtype, "f64 or f32");
    add_seed(upc);

    auto *fwd = app.add_subcommand("forward", "run random tokens through a layer");
    add_source(fwd);
    fwd->add_option("--samples", o.forward_samples, "number of tokens")->capture_default_str();
    fwd->add_option("--mode", o.mode, "dedup or naive");
    fwd->add_option("--format", o.format, "csv or json");
    add_out(fwd, "output file (stdout if omitted)");
    add_seed(fwd);

    auto *sr = app.add_subcommand("simulate-routing", "histogram of adjugate evaluations per token");
    add_source(sr);
    sr->add_option("--samples", o.routing_samples, "number of tokens")->capture_default_str();
    add_out(sr, "output directory (report.json, histogram.csv)");
    add_seed(sr);

    auto *sb = app.add_subcommand("simulate-balance", "closed-loop bias controller on skewed logits");
    sb->add_option("--config", o.config, "JSON config (n, k, d, alpha, seed are used)");
    sb->add_option("--skew", o.skew, "logit offset on hot experts")->capture_default_str();
    sb->add_option("--hot", o.hot, "number of skewed experts")->capture_default_str();
    sb->add_option("--steps", o.balance_steps, "controller steps")->capture_default_str();
    sb->add_option("--batch", o.balance_batch, "tokens per step")->capture_default_str();
    sb->add_option("--alpha", o.alpha, "bias update rate (default from config, 0.001)");
    sb->add_option("--ema-decay", o.ema_decay, "load estimate decay")->capture_default_str();
    sb->add_flag("--resample", o.resample, "draw a fresh batch every step");
    sb->add_option("--format", o.format, "csv or json");
    add_out(sb, "trajectory file (stdout if omitted)");
    add_seed(sb);

    auto *gc = app.add_subcommand("gradcheck", "analytic backward vs central finite differences");
    add_source(gc);
    gc->add_option("--probes", o.probes, "random probes")->capture_default_str();
    gc->add_option("--entries", o.entries, "entries sampled per tensor (0 = all)")->capture_default_str();
    add_out(gc, "JSON report path");
    add_seed(gc);

    auto *tt = app.add_subcommand("train-toy", "fit a random linear map with SGD and the balance controller");
    add_source(tt);
    tt->add_option("--steps", o.train_steps, "SGD steps")->capture_default_str();
    tt->add_option("--batch", o.train_batch, "tokens per step")->capture_default_str();
    tt->add_option("--lr", o.learning_rate, "learning rate")->capture_default_str();
    tt->add_option("--ema-decay", o.ema_decay, "load estimate decay")->capture_default_str();
    tt->add_option("--dtype", o.dtype, "f64 or f32");
    add_out(tt, "output directory (loss.csv, final.ckpt)");
    add_seed(tt);

    auto *st = app.add_subcommand("stats", "parameter and FLOP accounting for a config or checkpoint");
    add_source(st);
    st->add_option("--format", o.stats_format, "json or csv")->capture_default_str();
    add_out(st, "output file (stdout if omitted)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidationFailure;
    }

    try {
        if (init->parsed())
            return cmd_init(o, out);
        if (upc->parsed())
            return cmd_upcycle(o, out);
        if (fwd->parsed())
            return cmd_forward(o, out);
        if (sr->parsed())
            return cmd_simulate_routing(o, out);
        if (sb->parsed())
            return cmd_simulate_balance(o, out);
        if (gc->parsed())
            return cmd_gradcheck(o, out);
        if (tt->parsed())
            return cmd_train_toy(o, out);
        if (st->parsed())
            return cmd_stats(o, out);
    } catch (const ConfigError &e) {
        err << "invalid config: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const CheckpointError &e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const fs::filesystem_error &e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kValidationFailure;
    }
    return kValidationFailure;
}

} // namespace grove::cli
