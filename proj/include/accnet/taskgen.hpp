#pragma once

#include <accnet/error.hpp>
#include <accnet/numerics.hpp>
#include <accnet/rng.hpp>

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace accnet {

inline constexpr const char* generator_version = "accnet-taskgen/1";

/// Matern correlation 2^{1-nu}/Gamma(nu) z^nu K_nu(z), z = sqrt(2 nu) r / length_scale.
/// nu in {0.5, 1.5, 2.5} use the closed forms.
inline double matern(double r, double nu, double length_scale = 1.0)
{
    if (!(r >= 0.0) || !(nu > 0.0) || !(length_scale > 0.0))
        throw ConfigError("matern: need r >= 0, nu > 0, length_scale > 0");
    if (r == 0.0)
        return 1.0;
    const double x = r / length_scale;
    if (nu == 0.5)
        return std::exp(-x);
    if (nu == 1.5) {
        const double a = std::sqrt(3.0) * x;
        return (1.0 + a) * std::exp(-a);
    }
    if (nu == 2.5) {
        const double a = std::sqrt(5.0) * x;
        return (1.0 + a + a * a / 3.0) * std::exp(-a);
    }
    const double z = std::sqrt(2.0 * nu) * x;
    const double k = std::cyl_bessel_k(nu, z);
    if (k == 0.0)
        return 0.0;
    if (!std::isfinite(k)) {
        // K_nu overflowed: z is tiny relative to nu, use the small-z expansion.
        return nu > 1.0 ? std::max(0.0, 1.0 - z * z / (4.0 * (nu - 1.0))) : 1.0;
    }
    const double log_value = (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu) + nu * std::log(z) + std::log(k);
    return std::clamp(std::exp(log_value), 0.0, 1.0);
}

/// Pairwise Matern Gram matrix of the rows of `points`; exactly symmetric.
inline Matrix gram(const Matrix& points, double nu, double length_scale = 1.0)
{
    const Eigen::Index n = points.rows();
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        k(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = matern((points.row(i) - points.row(j)).norm(), nu, length_scale);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

struct GpSample {
    Matrix values;      ///< D x n_cols, columns ~ N(0, k + jitter I)
    double jitter = 0.0;
};

/// Z = L G with L the jittered Cholesky factor of k and G standard normal
/// (filled column by column).
inline GpSample gp_sample(const Matrix& k, Eigen::Index n_cols, RngStream& rng, double jitter0 = 0.0)
{
    const CholeskyFactor chol = cholesky_jitter(k, jitter0);
    Matrix g(k.rows(), n_cols);
    for (Eigen::Index c = 0; c < n_cols; ++c)
        for (Eigen::Index r = 0; r < k.rows(); ++r)
            g(r, c) = rng.normal();
    return {chol.lower.triangularView<Eigen::Lower>() * g, chol.jitter};
}

struct TaskSpec {
    Eigen::Index d_in = 6;
    Eigen::Index d_mid = 2;
    Eigen::Index d_out = 3;
    double nu_g = 4.0;
    double nu_h = 1.0;
    double length_scale = 1.0;
    Eigen::Index n_total = 2500;
    Eigen::Index n_test = 500;
    double input_radius = 1.0;
    std::uint64_t seed = 0;

    Eigen::Index n_train() const { return n_total - n_test; }

    void validate() const
    {
        auto require = [](bool ok, const char* field, const std::string& why) {
            if (!ok)
                throw ConfigError(std::string("task.") + field + " " + why);
        };
        require(d_in >= 1, "d_in", "must be >= 1");
        require(d_mid >= 1, "d_mid", "must be >= 1");
        require(d_out >= 1, "d_out", "must be >= 1");
        require(nu_g > 0.0, "nu_g", "must be > 0");
        require(nu_h > 0.0, "nu_h", "must be > 0");
        require(length_scale > 0.0, "length_scale", "must be > 0");
        require(n_total >= 2, "n_total", "must be >= 2");
        require(n_test >= 1 && n_test < n_total, "n_test", "must satisfy 1 <= n_test < n_total");
        require(input_radius > 0.0, "input_radius", "must be > 0");
    }
};

inline void to_json(nlohmann::ordered_json& j, const TaskSpec& s)
{
    j = nlohmann::ordered_json{{"d_in", s.d_in},   {"d_mid", s.d_mid},
                               {"d_out", s.d_out}, {"nu_g", s.nu_g},
                               {"nu_h", s.nu_h},   {"length_scale", s.length_scale},
                               {"n_total", s.n_total}, {"n_test", s.n_test},
                               {"input_radius", s.input_radius}, {"seed", s.seed}};
}

/// Reads the fields present in `j` over the defaults; unknown keys are rejected.
inline TaskSpec task_spec_from_json(const nlohmann::json& j)
{
    TaskSpec s;
    if (!j.is_object())
        throw ConfigError("task: expected a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "d_in") s.d_in = value.get<Eigen::Index>();
            else if (key == "d_mid") s.d_mid = value.get<Eigen::Index>();
            else if (key == "d_out") s.d_out = value.get<Eigen::Index>();
            else if (key == "nu_g") s.nu_g = value.get<double>();
            else if (key == "nu_h") s.nu_h = value.get<double>();
            else if (key == "length_scale") s.length_scale = value.get<double>();
            else if (key == "n_total") s.n_total = value.get<Eigen::Index>();
            else if (key == "n_test") s.n_test = value.get<Eigen::Index>();
            else if (key == "input_radius") s.input_radius = value.get<double>();
            else if (key == "seed") s.seed = value.get<std::uint64_t>();
            else throw ConfigError("task: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("task: ") + e.what());
    }
    return s;
}

/// Rows of x / y are samples. Rows [0, n_train) form the training split and
/// rows [n_train, rows) the test split.
struct DataSet {
    Matrix x;
    Matrix y;
    Eigen::Index n_train = 0;
    TaskSpec spec;                   ///< generating spec (echoed for CSV-loaded data)
    std::string version = generator_version;
    double jitter_g = 0.0;           ///< Cholesky jitter used for K_g
    double jitter_h = 0.0;           ///< Cholesky jitter used for K_h

    Eigen::Index rows() const { return x.rows(); }
    Eigen::Index n_test() const { return x.rows() - n_train; }

    /// Training inputs as columns (d_in x n), optionally only the given rows.
    Matrix train_x_cols() const { return x.topRows(n_train).transpose(); }
    Matrix train_y_cols() const { return y.topRows(n_train).transpose(); }
    Matrix test_x_cols() const { return x.bottomRows(n_test()).transpose(); }
    Matrix test_y_cols() const { return y.bottomRows(n_test()).transpose(); }

    void validate() const
    {
        if (x.rows() != y.rows())
            throw ConfigError("DataSet: x and y have different row counts");
        if (n_train < 0 || n_train > x.rows())
            throw ConfigError("DataSet: split out of range");
    }
};

namespace detail {

/// Rows uniformly distributed in B(0, radius) of R^d.
inline Matrix uniform_ball_rows(Eigen::Index n, Eigen::Index d, double radius, RngStream& rng)
{
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        double norm2 = 0.0;
        do {
            for (Eigen::Index c = 0; c < d; ++c)
                x(i, c) = rng.normal();
            norm2 = x.row(i).squaredNorm();
        } while (norm2 == 0.0);
        const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
        x.row(i) *= r / std::sqrt(norm2);
    }
    return x;
}

} // namespace detail

/// Compositional GP task: X uniform in the input ball, Z ~ GP(K_g(X)) with
/// d_mid columns, Y ~ GP(K_h(Z)) with d_out columns. Z is not kept.
inline DataSet generate(const TaskSpec& spec)
{
    spec.validate();
    RngStream rng(spec.seed, hash_key(0x7461736bULL));
    RngStream x_rng = rng.derive(1), z_rng = rng.derive(2), y_rng = rng.derive(3);

    DataSet ds;
    ds.spec = spec;
    ds.n_train = spec.n_train();
    ds.x = detail::uniform_ball_rows(spec.n_total, spec.d_in, spec.input_radius, x_rng);
    try {
        const Matrix k_g = gram(ds.x, spec.nu_g, spec.length_scale);
        GpSample z = gp_sample(k_g, spec.d_mid, z_rng);
        ds.jitter_g = z.jitter;
        const Matrix k_h = gram(z.values, spec.nu_h, spec.length_scale);
        GpSample y = gp_sample(k_h, spec.d_out, y_rng);
        ds.jitter_h = y.jitter;
        ds.y = std::move(y.values);
    } catch (const NumericError& e) {
        nlohmann::ordered_json j = spec;
        throw NumericError(std::string(e.what()) + " (task " + j.dump() + ")");
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline std::string format_f64(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, const std::string& prefix)
{
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write " + path.string());
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        out << (c ? "," : "") << prefix << c;
    out << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out << (c ? "," : "") << format_f64(m(r, c));
        out << '\n';
    }
}

struct CsvTable {
    std::vector<std::string> header;
    Matrix values;
};

inline std::vector<std::string> split_commas(const std::string& line)
{
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        cells.push_back(cell);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

inline double parse_cell(const std::string& raw, const std::string& file, std::size_t line_no)
{
    std::size_t b = 0, e = raw.size();
    while (b < e && std::isspace(static_cast<unsigned char>(raw[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1])))
        --e;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(raw.data() + b, raw.data() + e, v);
    if (b == e || ec != std::errc() || ptr != raw.data() + e || !std::isfinite(v))
        throw ConfigError(file + ":" + std::to_string(line_no) + ": non-numeric cell '" + raw + "'");
    return v;
}

inline CsvTable read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line))
        throw ConfigError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    t.header = split_commas(line);
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto cells = split_commas(line);
        if (cells.size() != t.header.size())
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(t.header.size()) + " cells, found " + std::to_string(cells.size()));
        std::vector<double> row;
        for (const auto& c : cells)
            row.push_back(parse_cell(c, path.string(), line_no));
        rows.push_back(std::move(row));
    }
    t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return t;
}

} // namespace detail

inline nlohmann::ordered_json dataset_manifest(const DataSet& ds)
{
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["generator_version"] = ds.version;
    j["task"] = ds.spec;
    j["seed"] = ds.spec.seed;
    j["rows"] = ds.rows();
    j["split"] = {{"train", {0, ds.n_train}}, {"test", {ds.n_train, ds.rows()}}};
    j["jitter"] = {{"k_g", ds.jitter_g}, {"k_h", ds.jitter_h}};
    j["files"] = {{"x", "x.csv"}, {"y", "y.csv"}};
    return j;
}

/// Writes manifest.json, x.csv and y.csv into `dir` (created if missing).
inline void save_dataset(const DataSet& ds, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    detail::write_matrix_csv(dir / "x.csv", ds.x, "x");
    detail::write_matrix_csv(dir / "y.csv", ds.y, "y");
    std::ofstream out(dir / "manifest.json");
    out << dataset_manifest(ds).dump(2) << '\n';
    if (!out)
        throw ConfigError("cannot write " + (dir / "manifest.json").string());
}

inline DataSet load_dataset(const std::filesystem::path& dir)
{
    std::ifstream in(dir / "manifest.json");
    if (!in)
        throw ConfigError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest.json: " + std::string(e.what()));
    }
    DataSet ds;
    try {
        ds.spec = task_spec_from_json(j.at("task"));
        ds.version = j.at("generator_version").get<std::string>();
        ds.n_train = j.at("split").at("train").at(1).get<Eigen::Index>();
        ds.jitter_g = j.at("jitter").at("k_g").get<double>();
        ds.jitter_h = j.at("jitter").at("k_h").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest.json: " + std::string(e.what()));
    }
    ds.x = detail::read_csv(dir / "x.csv").values;
    ds.y = detail::read_csv(dir / "y.csv").values;
    if (ds.x.cols() != ds.spec.d_in || ds.y.cols() != ds.spec.d_out)
        throw ConfigError("dataset columns do not match the manifest dimensions");
    ds.validate();
    return ds;
}

/// Describes a user CSV: the first d_in columns are inputs, the next d_out
/// columns are targets, the last n_test rows form the test split.
struct CsvManifest {
    Eigen::Index d_in = 1;
    Eigen::Index d_out = 1;
    Eigen::Index n_test = 0;
};

inline DataSet load_csv(const std::filesystem::path& path, const CsvManifest& manifest)
{
    const auto table = detail::read_csv(path);
    if (table.values.rows() == 0)
        throw ConfigError(path.string() + ": dataset is empty (header only)");
    if (table.values.cols() != manifest.d_in + manifest.d_out)
        throw ConfigError(path.string() + ": has " + std::to_string(table.values.cols()) +
                          " columns, manifest expects d_in + d_out = " +
                          std::to_string(manifest.d_in + manifest.d_out));
    if (manifest.n_test < 0 || manifest.n_test >= table.values.rows())
        throw ConfigError(path.string() + ": n_test out of range");
    DataSet ds;
    ds.x = table.values.leftCols(manifest.d_in);
    ds.y = table.values.rightCols(manifest.d_out);
    ds.n_train = table.values.rows() - manifest.n_test;
    ds.spec.d_in = manifest.d_in;
    ds.spec.d_out = manifest.d_out;
    ds.spec.n_total = table.values.rows();
    ds.spec.n_test = manifest.n_test;
    ds.version = "csv";
    return ds;
}

/// Single CSV with x0.. then y0.. columns.
inline void save_csv(const DataSet& ds, const std::filesystem::path& path)
{
    Matrix both(ds.rows(), ds.x.cols() + ds.y.cols());
    both << ds.x, ds.y;
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write " + path.string());
    for (Eigen::Index c = 0; c < ds.x.cols(); ++c)
        out << (c ? "," : "") << 'x' << c;
    for (Eigen::Index c = 0; c < ds.y.cols(); ++c)
        out << ',' << 'y' << c;
    out << '\n';
    for (Eigen::Index r = 0; r < both.rows(); ++r) {
        for (Eigen::Index c = 0; c < both.cols(); ++c)
            out << (c ? "," : "") << detail::format_f64(both(r, c));
        out << '\n';
    }
}

} // namespace accnet
