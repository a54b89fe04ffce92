#pragma once

#include <accnet/complexity.hpp>
#include <accnet/entropy.hpp>
#include <accnet/error.hpp>
#include <accnet/model_io.hpp>
#include <accnet/scaling.hpp>
#include <accnet/taskgen.hpp>
#include <accnet/train.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace accnet::cli {

inline constexpr int schema_major = 1;

enum ExitCode { ok = 0, config_error = 2, numeric_error = 3, partial_sweep = 4 };

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config documents

/// Typed reads from a JSON object; finish() rejects keys never asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where))
    {
        if (!j_.is_object())
            throw ConfigError(where_ + ": expected a JSON object");
    }

    template <typename T>
    bool read(const std::string& key, T& out)
    {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end())
            return false;
        try {
            out = it->template get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
        return true;
    }

    const json* child(const std::string& key)
    {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k))
                throw ConfigError(where_ + ": unknown key '" + k + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline ArchTemplate parse_arch(const json& j)
{
    ArchTemplate a;
    ObjectReader r(j, "arch");
    r.read("hidden_dims", a.hidden_dims);
    r.read("widths", a.widths);
    r.finish();
    a.validate();
    return a;
}

inline ojson to_json(const ArchTemplate& a) { return {{"hidden_dims", a.hidden_dims}, {"widths", a.widths}}; }

inline TrainConfig parse_train(const json& j)
{
    ObjectReader r(j, "train");
    int per_phase = 1200;
    r.read("epochs_per_phase", per_phase);
    if (per_phase < 1)
        throw ConfigError("train.epochs_per_phase must be >= 1");
    TrainConfig t = TrainConfig::three_phase(per_phase);
    if (const json* phases = r.child("phases")) {
        if (!phases->is_array())
            throw ConfigError("train.phases: expected an array");
        t.phases.clear();
        for (std::size_t i = 0; i < phases->size(); ++i) {
            Phase p;
            ObjectReader pr((*phases)[i], "train.phases[" + std::to_string(i) + "]");
            pr.read("epochs", p.epochs);
            pr.read("lr", p.lr);
            pr.read("weight_decay", p.weight_decay);
            pr.finish();
            t.phases.push_back(p);
        }
    }
    r.read("batch_count", t.batch_count);
    std::string name;
    if (r.read("loss", name))
        t.loss = loss_from_string(name);
    if (r.read("decay_mode", name))
        t.decay_mode = decay_mode_from_string(name);
    r.read("seed", t.seed);
    r.finish();
    t.validate();
    return t;
}

inline ojson to_json(const TrainConfig& t)
{
    ojson phases = ojson::array();
    for (const auto& p : t.phases)
        phases.push_back({{"epochs", p.epochs}, {"lr", p.lr}, {"weight_decay", p.weight_decay}});
    return {{"phases", phases},
            {"batch_count", t.batch_count},
            {"loss", to_string(t.loss)},
            {"decay_mode", to_string(t.decay_mode)},
            {"seed", t.seed}};
}

inline BoundConfig parse_bound(const json& j)
{
    BoundConfig b;
    ObjectReader r(j, "bound");
    r.read("input_radius_b", b.input_radius_b);
    r.read("loss_lipschitz_rho", b.loss_lipschitz_rho);
    r.read("loss_bound_c0", b.loss_bound_c0);
    r.read("delta", b.delta);
    r.read("n_samples", b.n_samples);
    std::string lip;
    if (r.read("lip", lip)) {
        if (lip == "upper")
            b.lip = LipMode::Upper;
        else if (lip == "empirical")
            b.lip = LipMode::Empirical;
        else
            throw ConfigError("bound.lip: unknown mode '" + lip + "' (expected upper or empirical)");
    }
    if (const json* p = r.child("probes")) {
        ObjectReader pr(*p, "bound.probes");
        pr.read("n_probes", b.probes.n_probes);
        pr.read("radius", b.probes.radius);
        pr.read("step", b.probes.step);
        pr.read("seed", b.probes.seed);
        pr.finish();
    }
    double c = 0.0;
    if (r.read("bare_constant", c))
        b.bare_constant = c;
    r.finish();
    b.validate();
    return b;
}

inline ojson to_json(const BoundConfig& b)
{
    return {{"input_radius_b", b.input_radius_b},
            {"loss_lipschitz_rho", b.loss_lipschitz_rho},
            {"loss_bound_c0", b.loss_bound_c0},
            {"delta", b.delta},
            {"n_samples", b.n_samples},
            {"lip", b.lip == LipMode::Upper ? "upper" : "empirical"},
            {"probes",
             {{"n_probes", b.probes.n_probes},
              {"radius", b.probes.radius},
              {"step", b.probes.step},
              {"seed", b.probes.seed}}},
            {"bare_constant", b.bare_constant ? ojson(*b.bare_constant) : ojson(nullptr)}};
}

/// Reads a config file and checks its schema_version major.
inline json load_document(const std::string& path)
{
    if (path.empty())
        return json::object();
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    if (!j.is_object())
        throw ConfigError("config '" + path + "': expected a JSON object");
    const auto it = j.find("schema_version");
    if (it == j.end())
        throw ConfigError("config '" + path + "': missing schema_version");
    int major = 0;
    if (it->is_number_integer())
        major = it->get<int>();
    else if (it->is_string())
        major = std::atoi(it->get<std::string>().c_str());
    else
        throw ConfigError("config '" + path + "': schema_version must be an integer or \"major.minor\" string");
    if (major != schema_major)
        throw ConfigError("config '" + path + "': unsupported schema_version major " + std::to_string(major) +
                          " (this build reads " + std::to_string(schema_major) + ")");
    j.erase("schema_version");
    return j;
}

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when it can be.
inline void apply_overrides(json& doc, const std::vector<std::string>& sets)
{
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("--set expects key=value, got '" + s + "'");
        const std::string path = s.substr(0, eq), raw = s.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded())
            value = raw;
        json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = path.find('.', start);
            const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (key.empty())
                throw ConfigError("--set: empty path component in '" + path + "'");
            if (!node->is_object())
                throw ConfigError("--set: '" + path + "' descends into a non-object");
            if (dot == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            if (node->is_null())
                *node = json::object();
            start = dot + 1;
        }
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out)
        throw ConfigError("failed writing '" + path.string() + "'");
}

inline void make_dir(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw ConfigError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenArgs {
    std::string config, out;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

inline int cmd_gen(const GenArgs& a, std::ostream& out)
{
    json doc = load_document(a.config);
    apply_overrides(doc, a.sets);
    ObjectReader r(doc, "config");
    TaskSpec spec;
    if (const json* t = r.child("task"))
        spec = task_spec_from_json(*t);
    r.finish();
    if (a.seed)
        spec.seed = *a.seed;
    spec.validate();

    ojson echo = spec;
    out << "task " << echo.dump() << '\n';
    const auto t0 = std::chrono::steady_clock::now();
    const DataSet ds = generate(spec);
    make_dir(a.out);
    save_dataset(ds, a.out);
    out << "generated " << ds.rows() << " rows (" << ds.n_train << " train) in " << seconds_since(t0) << " s -> "
        << a.out << '\n';
    return ok;
}

struct TrainArgs {
    std::string config, data, out, model = "";
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs_per_phase;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out)
{
    json doc = load_document(a.config);
    if (a.epochs_per_phase)
        doc["train"]["epochs_per_phase"] = *a.epochs_per_phase;
    if (!a.model.empty())
        doc["model"] = a.model;
    if (a.seed)
        doc["train"]["seed"] = *a.seed;
    apply_overrides(doc, a.sets);

    ObjectReader r(doc, "config");
    ArchTemplate arch;
    TrainConfig tc = TrainConfig::three_phase();
    std::string model_name = "accnet";
    if (const json* j = r.child("arch"))
        arch = parse_arch(*j);
    if (const json* j = r.child("train"))
        tc = parse_train(*j);
    r.read("model", model_name);
    r.finish();
    const ModelKind kind = model_kind_from_string(model_name);
    if (kind == ModelKind::Kernel)
        throw ConfigError("model: the kernel baseline is only available in sweeps");

    const DataSet ds = load_dataset(a.data);
    RngStream rng(tc.seed, hash_key(0x696e6974ULL));
    const AccNet init = init_model(kind, arch, ds.x.cols(), ds.y.cols(), rng);
    tc.frozen_w_out = frozen_w_out(kind, init.depth());

    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res =
        train(init, ds.train_x_cols(), ds.train_y_cols(), ds.test_x_cols(), ds.test_y_cols(), tc);
    const double elapsed = seconds_since(t0);

    make_dir(a.out);
    const std::filesystem::path dir(a.out);
    save_model(res.net, dir / "model.json", tc.seed);
    {
        std::ostringstream h;
        write_history_csv(h, res.history);
        write_text(dir / "history.csv", h.str());
    }
    const auto& last = res.history.back();
    ojson manifest;
    manifest["schema_version"] = schema_major;
    manifest["command"] = "train";
    manifest["data"] = dataset_manifest(ds);
    manifest["model"] = model_name;
    manifest["arch"] = to_json(arch);
    manifest["train"] = to_json(tc);
    manifest["final"] = {{"train_loss", last.train_loss}, {"test_loss", last.test_loss}, {"param_norm", last.param_norm}};
    write_text(dir / "train_manifest.json", manifest.dump(2) + "\n");

    BoundConfig bc;
    bc.input_radius_b = ds.spec.input_radius;
    bc.n_samples = static_cast<std::size_t>(std::max<Eigen::Index>(2, ds.n_train));
    const AccNet split = kind == ModelKind::Fcnn ? fcnn_to_accnet(accnet_to_fcnn(res.net)) : res.net;
    out << "trained " << tc.total_epochs() << " epochs in " << elapsed << " s; train L1 " << last.train_loss
        << ", test L1 " << last.test_loss << '\n';
    print_table(out, complexity_report(split, bc));
    return ok;
}

struct BoundArgs {
    std::string model, config, data, out;
    std::vector<std::string> sets;
};

inline int cmd_bound(const BoundArgs& a, std::ostream& out)
{
    json doc = load_document(a.config);
    apply_overrides(doc, a.sets);
    ObjectReader r(doc, "config");
    const json* bj = r.child("bound");
    r.finish();

    const StoredModel stored = load_model(a.model);
    std::optional<DataSet> ds;
    if (!a.data.empty())
        ds = load_dataset(a.data);

    // Values read from the data directory fill in what the config leaves unset.
    json bound_doc = bj ? *bj : json::object();
    if (ds) {
        if (!bound_doc.contains("n_samples"))
            bound_doc["n_samples"] = std::max<Eigen::Index>(2, ds->n_train);
        if (!bound_doc.contains("input_radius_b"))
            bound_doc["input_radius_b"] = ds->spec.input_radius;
    }
    const BoundConfig bc = parse_bound(bound_doc);
    const ComplexityReport rep = complexity_report(stored.net, bc);

    ojson j;
    j["schema_version"] = schema_major;
    j["command"] = "bound";
    j["model"] = a.model;
    j["bound_config"] = to_json(bc);
    j["report"] = to_json(rep);
    if (stored.net.depth() == 1)
        j["thm1_bound"] = thm1_bound(stored.net.block(0), bc);
    if (ds) {
        const double train_l1 = batch_loss(Loss::L1, stored.net.forward(ds->train_x_cols()), ds->train_y_cols());
        const double test_l1 = batch_loss(Loss::L1, stored.net.forward(ds->test_x_cols()), ds->test_y_cols());
        j["measured"] = {{"train_l1", train_l1}, {"test_l1", test_l1}, {"gap", test_l1 - train_l1}};
    }
    print_table(out, rep);
    const std::filesystem::path dest =
        a.out.empty() ? std::filesystem::path(a.model).parent_path() / "bound.json" : std::filesystem::path(a.out);
    write_text(dest, j.dump(2) + "\n");
    out << "bound " << rep.thm2_bound << " -> " << dest.string() << '\n';
    return ok;
}

struct SweepArgs {
    std::string config, out;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs_per_phase;
    bool mock = false;
    bool resume = false;
    int jobs = 0;
};

struct SweepDocument {
    SweepConfig cfg;
    std::vector<double> heatmap_nu_g, heatmap_nu_h;
};

inline SweepDocument parse_sweep_document(const json& doc)
{
    SweepDocument d;
    SweepConfig& c = d.cfg;
    ObjectReader r(doc, "config");
    if (const json* j = r.child("task"))
        c.task = task_spec_from_json(*j);
    if (const json* j = r.child("arch"))
        c.arch = parse_arch(*j);
    if (const json* j = r.child("train"))
        c.train = parse_train(*j);
    bool bound_radius_set = false;
    if (const json* j = r.child("bound")) {
        c.bound = parse_bound(*j);
        bound_radius_set = j->contains("input_radius_b");
    }
    if (const json* j = r.child("sweep")) {
        ObjectReader s(*j, "sweep");
        s.read("n_grid", c.n_grid);
        std::string model;
        if (s.read("model", model))
            c.model = model_kind_from_string(model);
        s.read("repeats", c.repeats);
        s.read("seed", c.seed);
        s.read("kernel_ridge", c.kernel_ridge);
        s.read("fit_skip_smallest", c.fit_skip_smallest);
        s.read("rank_tol", c.rank_tol);
        s.finish();
    }
    if (const json* j = r.child("mock")) {
        MockTrainer m;
        ObjectReader s(*j, "mock");
        s.read("exponent", m.exponent);
        s.read("scale", m.scale);
        s.read("fail_n", m.fail_n);
        s.finish();
        c.mock = m;
    }
    if (const json* j = r.child("heatmap")) {
        ObjectReader s(*j, "heatmap");
        s.read("nu_g", d.heatmap_nu_g);
        s.read("nu_h", d.heatmap_nu_h);
        s.finish();
    }
    r.finish();
    if (!bound_radius_set)
        c.bound.input_radius_b = c.task.input_radius;
    return d;
}

inline ojson to_json(const SweepConfig& c)
{
    ojson j;
    j["task"] = c.task;
    j["arch"] = to_json(c.arch);
    j["train"] = to_json(c.train);
    j["bound"] = to_json(c.bound);
    j["sweep"] = {{"n_grid", c.n_grid},
                  {"model", to_string(c.model)},
                  {"repeats", c.repeats},
                  {"seed", c.seed},
                  {"kernel_ridge", c.kernel_ridge},
                  {"fit_skip_smallest", c.fit_skip_smallest},
                  {"rank_tol", c.rank_tol}};
    j["mock"] = c.mock ? ojson{{"exponent", c.mock->exponent}, {"scale", c.mock->scale}, {"fail_n", c.mock->fail_n}}
                       : ojson(nullptr);
    return j;
}

inline int cmd_sweep(const SweepArgs& a, std::ostream& out)
{
    json doc = load_document(a.config);
    if (a.epochs_per_phase)
        doc["train"]["epochs_per_phase"] = *a.epochs_per_phase;
    if (a.seed)
        doc["sweep"]["seed"] = *a.seed;
    apply_overrides(doc, a.sets);
    SweepDocument d = parse_sweep_document(doc);
    SweepConfig& cfg = d.cfg;
    if (a.mock && !cfg.mock)
        cfg.mock = MockTrainer{};
    cfg.jobs = a.jobs;
    const std::filesystem::path dir(a.out);
    make_dir(dir);
    cfg.cell_cache = dir / "cells";
    if (!a.resume)
        std::filesystem::remove_all(*cfg.cell_cache);
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    const ScalingReport rep = run_sweep(cfg);
    emit_report(rep, dir);
    if (!d.heatmap_nu_g.empty() && !d.heatmap_nu_h.empty()) {
        std::ostringstream h;
        const auto cells = predicted_heatmap(d.heatmap_nu_g, d.heatmap_nu_h, cfg.task.d_in, cfg.task.d_mid);
        write_heatmap_csv(h, cells);
        write_text(dir / "heatmap_predicted.csv", h.str());
    }

    ojson manifest;
    manifest["schema_version"] = schema_major;
    manifest["command"] = "sweep";
    manifest["config"] = to_json(cfg);
    ojson done = ojson::array(), failed = ojson::array();
    for (const auto& c : rep.cells) {
        ojson key{{"n", c.n}, {"repeat", c.repeat}};
        if (c.ok) {
            done.push_back(key);
        } else {
            key["error"] = c.error;
            failed.push_back(key);
        }
    }
    manifest["completed_cells"] = done;
    manifest["failed_cells"] = failed;
    write_text(dir / "sweep_manifest.json", manifest.dump(2) + "\n");

    out << to_string(rep.model) << " sweep: " << rep.cells.size() - static_cast<std::size_t>(rep.failed_cells) << "/"
        << rep.cells.size() << " cells in " << seconds_since(t0) << " s; fitted slope ";
    if (rep.fitted_slope)
        out << *rep.fitted_slope;
    else
        out << "null";
    out << ", predicted " << rep.predicted_slope << " -> " << dir.string() << '\n';
    return rep.failed_cells > 0 ? partial_sweep : ok;
}

// ---------------------------------------------------------------------------
// Entropy tabulation

inline const std::vector<std::string>& entropy_formulas()
{
    static const std::vector<std::string> names{"ellipsoid", "ball",        "sobolev",
                                                "dudley",    "convex_hull", "greedy"};
    return names;
}

/// Base entropy functions for dudley / convex_hull:
/// {"kind": "constant", "value": v}, {"kind": "power", "c0": c, "exponent": p} (c eps^{-p}),
/// {"kind": "ellipsoid", "eigenvalues": [...]}, {"kind": "sobolev", "R", "d", "nu", "c0"}.
inline EntropyFn parse_base(const json& j)
{
    ObjectReader r(j, "params.base");
    std::string kind;
    if (!r.read("kind", kind))
        throw ConfigError("params.base.kind is required (constant, power, ellipsoid or sobolev)");
    EntropyFn fn;
    if (kind == "constant") {
        double v = 0.0;
        r.read("value", v);
        if (!(v >= 0.0))
            throw ConfigError("params.base.value must be >= 0");
        fn = [v](double) { return v; };
    } else if (kind == "power") {
        double c0 = 1.0, p = 1.0;
        r.read("c0", c0);
        r.read("exponent", p);
        if (!(c0 >= 0.0) || !(p >= 0.0))
            throw ConfigError("params.base: c0 and exponent must be >= 0");
        fn = [c0, p](double e) { return c0 * std::pow(e, -p); };
    } else if (kind == "ellipsoid") {
        std::vector<double> lambda;
        r.read("eigenvalues", lambda);
        EllipsoidSpec spec(lambda);
        fn = [spec](double e) { return ellipsoid_entropy(spec, e); };
    } else if (kind == "sobolev") {
        double radius = 1.0, d = 1.0, nu = 1.0, c0 = 1.0;
        r.read("R", radius);
        r.read("d", d);
        r.read("nu", nu);
        r.read("c0", c0);
        fn = [=](double e) { return sobolev_entropy_bound(radius, e, d, nu, c0); };
    } else {
        throw ConfigError("params.base.kind: unknown '" + kind + "' (expected constant, power, ellipsoid or sobolev)");
    }
    r.finish();
    return fn;
}

struct EntropyArgs {
    std::string config, formula, out, points;
    std::vector<double> eps;
    std::vector<std::string> sets;
};

inline std::string tabulate_entropy(const std::string& formula, const std::vector<double>& grid, const json& params,
                                    const std::string& points_path)
{
    auto f = [](double v) { return detail::format_f64(v); };
    std::ostringstream csv;
    ObjectReader r(params, "params");
    if (formula == "ellipsoid") {
        std::vector<double> lambda;
        r.read("eigenvalues", lambda);
        r.finish();
        const EllipsoidSpec spec(lambda);
        csv << "eps,entropy,condition_holds\n";
        for (double e : grid)
            csv << f(e) << ',' << f(ellipsoid_entropy(spec, e)) << ',' << (ellipsoid_condition_holds(spec, e) ? 1 : 0)
                << '\n';
    } else if (formula == "ball") {
        double trace = 1.0;
        r.read("trace", trace);
        r.finish();
        csv << "eps,entropy\n";
        for (double e : grid)
            csv << f(e) << ',' << f(ball_entropy_bound(trace, e)) << '\n';
    } else if (formula == "sobolev") {
        double radius = 1.0, d = 1.0, nu = 1.0, c0 = 1.0;
        r.read("R", radius);
        r.read("d", d);
        r.read("nu", nu);
        r.read("c0", c0);
        r.finish();
        csv << "eps,entropy\n";
        for (double e : grid)
            csv << f(e) << ',' << f(sobolev_entropy_bound(radius, e, d, nu, c0)) << '\n';
    } else if (formula == "dudley") {
        // grid values are the class radius c; M is fixed when given, else the argmin over [1, 60]
        const json* base = r.child("base");
        std::size_t n = 100;
        int m = 0;
        r.read("n", n);
        r.read("m", m);
        r.finish();
        if (!base)
            throw ConfigError("params.base is required for dudley");
        const EntropyFn fn = parse_base(*base);
        csv << "c,m,value\n";
        for (double c : grid) {
            const DudleyOptimum opt = m > 0 ? DudleyOptimum{m, dudley_bound(fn, c, n, m)} : dudley_argmin(fn, c, n);
            csv << f(c) << ',' << opt.m_levels << ',' << f(opt.value) << '\n';
        }
    } else if (formula == "convex_hull") {
        // grid values are the bound B; the covering radius is 2 B 2^{-K}
        const json* base = r.child("base");
        int k = 1;
        r.read("K", k);
        r.finish();
        if (!base)
            throw ConfigError("params.base is required for convex_hull");
        const EntropyFn fn = parse_base(*base);
        csv << "B,K,radius,entropy\n";
        for (double b : grid)
            csv << f(b) << ',' << k << ',' << f(2.0 * b * std::ldexp(1.0, -k)) << ','
                << f(convex_hull_entropy(fn, b, k)) << '\n';
    } else if (formula == "greedy") {
        std::string path = points_path;
        r.read("points", path);
        r.finish();
        if (path.empty())
            throw ConfigError("greedy needs a point cloud (--points FILE or params.points)");
        const detail::CsvTable t = detail::read_csv(path);
        const Matrix cols = t.values.transpose();
        csv << "eps,count,log_count\n";
        for (double e : grid) {
            const auto count = greedy_cover(cols, e);
            csv << f(e) << ',' << count << ',' << (count > 0 ? f(std::log(static_cast<double>(count))) : "nan")
                << '\n';
        }
    } else {
        std::string list;
        for (const auto& n : entropy_formulas())
            list += (list.empty() ? "" : ", ") + n;
        throw ConfigError("unknown formula '" + formula + "' (choices: " + list + ")");
    }
    return csv.str();
}

inline int cmd_entropy(const EntropyArgs& a, std::ostream& out)
{
    json doc = load_document(a.config);
    if (!a.formula.empty())
        doc["formula"] = a.formula;
    if (!a.eps.empty())
        doc["eps_grid"] = a.eps;
    apply_overrides(doc, a.sets);
    ObjectReader r(doc, "config");
    std::string formula;
    std::vector<double> grid;
    json params = json::object();
    r.read("formula", formula);
    r.read("eps_grid", grid);
    if (const json* p = r.child("params"))
        params = *p;
    r.finish();
    if (formula.empty())
        throw ConfigError("formula is required");
    if (grid.empty())
        throw ConfigError("eps_grid must not be empty");
    for (double e : grid)
        if (!(e > 0.0))
            throw ConfigError("eps_grid values must be > 0");

    const std::string table = tabulate_entropy(formula, grid, params, a.points);
    if (a.out.empty())
        out << table;
    else
        write_text(a.out, table);
    return ok;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Accordion networks: task generation, training, bounds, entropy tables and scaling sweeps"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a compositional Matern-GP dataset");
    g->add_option("-c,--config", gen.config, "JSON config ({schema_version, task})");
    g->add_option("-o,--out", gen.out, "output directory")->required();
    g->add_option("--seed", gen.seed, "override task.seed");
    g->add_option("--set", gen.sets, "override a config value, e.g. --set task.nu_g=2");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a network on a generated dataset");
    t->add_option("-c,--config", tr.config, "JSON config ({schema_version, model, arch, train})");
    t->add_option("-d,--data", tr.data, "dataset directory written by gen")->required();
    t->add_option("-o,--out", tr.out, "output directory")->required();
    t->add_option("--model", tr.model, "accnet, fcnn or shallow");
    t->add_option("--seed", tr.seed, "override train.seed");
    t->add_option("--epochs-per-phase", tr.epochs_per_phase, "epochs in each of the three default phases");
    t->add_option("--set", tr.sets, "override a config value");

    BoundArgs bo;
    auto* b = app.add_subcommand("bound", "complexity measures and generalization bound of a saved model");
    b->add_option("-m,--model", bo.model, "model manifest (model.json)")->required();
    b->add_option("-c,--config", bo.config, "JSON config ({schema_version, bound})");
    b->add_option("-d,--data", bo.data, "dataset directory; adds the measured gap and fills n_samples");
    b->add_option("-o,--out", bo.out, "report path (default: bound.json next to the model)");
    b->add_option("--set", bo.sets, "override a config value, e.g. --set bound.delta=0.01");

    SweepArgs sw;
    auto* s = app.add_subcommand("sweep", "scaling-law sweep over training set sizes");
    s->add_option("-c,--config", sw.config, "JSON config ({schema_version, task, arch, train, bound, sweep, mock})");
    s->add_option("-o,--out", sw.out, "report directory")->required();
    s->add_option("--seed", sw.seed, "override sweep.seed");
    s->add_option("--epochs-per-phase", sw.epochs_per_phase, "epochs in each of the three default phases");
    s->add_option("--jobs", sw.jobs, "worker cap (default: available cores)")->check(CLI::NonNegativeNumber);
    s->add_flag("--mock-trainer", sw.mock, "planted power-law errors instead of training");
    s->add_flag("--resume", sw.resume, "reuse completed cells from a previous run in the same directory");
    s->add_option("--set", sw.sets, "override a config value");

    EntropyArgs en;
    auto* e = app.add_subcommand("entropy", "tabulate a covering-number formula over an eps grid");
    e->add_option("-c,--config", en.config, "JSON config ({schema_version, formula, eps_grid, params})");
    e->add_option("-f,--formula", en.formula, "ellipsoid, ball, sobolev, dudley, convex_hull or greedy");
    e->add_option("--eps", en.eps, "comma-separated grid")->delimiter(',');
    e->add_option("--points", en.points, "point cloud CSV for greedy (header row, one point per row)");
    e->add_option("-o,--out", en.out, "CSV path (default: stdout)");
    e->add_option("--set", en.sets, "override a config value, e.g. --set params.eigenvalues=[4,1]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? ok : config_error;
    }

    try {
        if (*g)
            return cmd_gen(gen, out);
        if (*t)
            return cmd_train(tr, out);
        if (*b)
            return cmd_bound(bo, out);
        if (*s)
            return cmd_sweep(sw, out);
        if (*e)
            return cmd_entropy(en, out);
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return config_error;
    } catch (const NumericError& ex) {
        err << "numeric failure: " << ex.what() << '\n';
        return numeric_error;
    } catch (const std::filesystem::filesystem_error& ex) {
        err << "error: " << ex.what() << '\n';
        return config_error;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return config_error;
    }
    return config_error;
}

} // namespace accnet::cli
