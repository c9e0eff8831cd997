#pragma once

// Run configuration: a small INI-style text format with strict key
// validation, canonical printing (round-trip stable), and builders that turn
// a parsed config into the library objects.

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "stability.hpp"

namespace geotransport {

struct ConfigIssue {
    int line = 0;
    std::string message;
};

struct GeometryConfig {
    int dim = 2;
    std::string metric = "euclidean";  // euclidean | conformal | expr
    double bump_amp = 0.1;
    double bump_width = 0.6;
    std::string metric_expr;  // conformal factor c(x) when metric = expr
    double r_m = 1.0;
    double r_m0 = 1.2;
    double step = -1.0;  // default 0.01 * r_m0
};

struct CoefficientConfig {
    std::string a_family = "gaussian";  // gaussian | modulated | expr | file | none
    double a_amp = 0.5;
    Vec a_center{0.2, 0.1, 0.0};
    double a_width = 0.5;
    double a_beta = 0.3;  // direction modulation strength (modulated family)
    Vec a_axis{1.0, 0.0, 0.0};
    std::string a_expr;
    std::string a_file;
    std::string k_family = "cosine";  // cosine | expr | none
    double k_amp = 0.2;
    Vec k_center{0.0, 0.0, 0.0};
    double k_width = 0.6;
    double k_aniso = 0.4;
    std::string k_expr;
    double support_radius = 0.9;
};

struct GaugeConfig {
    std::string kind = "none";  // none | polynomial | trial
    std::string h_expr = "0.3*x1";
    double fd_delta = 1e-4;
};

struct GridConfig {
    int boundary_points = 128;
    int boundary_points_2 = 1;  // second chart axis (n = 3)
    int directions = 64;
    int directions_2 = 1;  // azimuthal count (n = 3)
    int phase_points = 33;  // spatial nodes per axis
    double path_step = -1.0;  // line-integral step; default = integrator step
};

struct ExperimentConfig {
    std::string mode = "n3";
    std::vector<double> deltas{0.01, 0.02, 0.05};
    int chain_samples = 32;
    double tol = -1.0;  // <0: estimated from one grid refinement
    int probe_positions = 6;
    int probe_directions = 2;
    int beam_cells = 4;
    int max_terms = 50;
    double solver_tol = 1e-10;
};

struct OutputConfig {
    std::string report = "report.json";
    std::string csv = "sweep.csv";
    std::string field_dump;  // optional CSV of the interior solution
};

struct RunConfig {
    GeometryConfig geometry;
    CoefficientConfig coefficients;
    CoefficientConfig coefficients_tilde;
    GaugeConfig gauge;
    GridConfig grids;
    ExperimentConfig experiment;
    OutputConfig output;
    bool has_tilde = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct KeyValue {
    std::string value;
    int line = 0;
};

using Section = std::map<std::string, KeyValue>;

inline bool to_double(const std::string& s, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

inline bool to_int(const std::string& s, int& out) {
    try {
        std::size_t pos = 0;
        out = std::stoi(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

inline bool to_vec(const std::string& s, Vec& out) {
    std::stringstream ss(s);
    std::string part;
    int i = 0;
    out = Vec{};
    while (std::getline(ss, part, ',')) {
        if (i >= 3) return false;
        double v;
        if (!to_double(trim(part), v)) return false;
        out[i++] = v;
    }
    return i >= 2;
}

inline bool to_double_list(const std::string& s, std::vector<double>& out) {
    std::stringstream ss(s);
    std::string part;
    out.clear();
    while (std::getline(ss, part, ',')) {
        double v;
        if (!to_double(trim(part), v)) return false;
        out.push_back(v);
    }
    return !out.empty();
}

class SectionReader {
public:
    SectionReader(const Section& sec, std::vector<ConfigIssue>& issues)
        : sec_(sec), issues_(issues) {}

    void num(const char* key, double& slot, bool positive = false) {
        auto it = sec_.find(key);
        if (it == sec_.end()) return;
        seen_.insert(key);
        double v;
        if (!to_double(it->second.value, v))
            issues_.push_back({it->second.line, std::string(key) + ": not a number"});
        else if (positive && v <= 0.0)
            issues_.push_back({it->second.line, std::string(key) + ": must be positive"});
        else
            slot = v;
    }

    void integer(const char* key, int& slot, int min_v = 1) {
        auto it = sec_.find(key);
        if (it == sec_.end()) return;
        seen_.insert(key);
        int v;
        if (!to_int(it->second.value, v) || v < min_v)
            issues_.push_back({it->second.line,
                               std::string(key) + ": must be an integer >= " + std::to_string(min_v)});
        else
            slot = v;
    }

    void text(const char* key, std::string& slot,
              const std::vector<std::string>& allowed = {}) {
        auto it = sec_.find(key);
        if (it == sec_.end()) return;
        seen_.insert(key);
        if (!allowed.empty()) {
            bool ok = false;
            for (const std::string& a : allowed) ok = ok || a == it->second.value;
            if (!ok) {
                std::string msg = std::string(key) + ": must be one of {";
                for (std::size_t i = 0; i < allowed.size(); ++i)
                    msg += (i ? ", " : "") + allowed[i];
                issues_.push_back({it->second.line, msg + "}"});
                return;
            }
        }
        slot = it->second.value;
    }

    void vec(const char* key, Vec& slot) {
        auto it = sec_.find(key);
        if (it == sec_.end()) return;
        seen_.insert(key);
        if (!to_vec(it->second.value, slot))
            issues_.push_back({it->second.line, std::string(key) + ": expected 2-3 comma-separated numbers"});
    }

    void list(const char* key, std::vector<double>& slot) {
        auto it = sec_.find(key);
        if (it == sec_.end()) return;
        seen_.insert(key);
        if (!to_double_list(it->second.value, slot))
            issues_.push_back({it->second.line, std::string(key) + ": expected comma-separated numbers"});
    }

    void finish(const std::string& section) {
        for (const auto& [k, kv] : sec_)
            if (!seen_.count(k))
                issues_.push_back({kv.line, "unknown key '" + k + "' in [" + section + "]"});
    }

private:
    const Section& sec_;
    std::vector<ConfigIssue>& issues_;
    std::set<std::string> seen_;
};

inline void read_coefficients(const Section& sec, CoefficientConfig& c, int dim,
                              const std::string& name, std::vector<ConfigIssue>& issues) {
    SectionReader r(sec, issues);
    r.text("a_family", c.a_family, {"gaussian", "modulated", "expr", "file", "none"});
    r.num("a_amp", c.a_amp);
    r.vec("a_center", c.a_center);
    r.num("a_width", c.a_width, true);
    r.num("a_beta", c.a_beta);
    r.vec("a_axis", c.a_axis);
    r.text("a_expr", c.a_expr);
    r.text("a_file", c.a_file);
    r.text("k_family", c.k_family, {"cosine", "expr", "none"});
    r.num("k_amp", c.k_amp);
    r.vec("k_center", c.k_center);
    r.num("k_width", c.k_width, true);
    r.num("k_aniso", c.k_aniso);
    r.text("k_expr", c.k_expr);
    r.num("support_radius", c.support_radius, true);
    r.finish(name);
    auto validate_expr = [&](const std::string& src, FieldRole role, const char* key) {
        if (src.empty()) {
            issues.push_back({0, name + "." + key + ": expression family needs the expression"});
            return;
        }
        try {
            parse_field_expr(src, role, dim);
        } catch (const std::exception& e) {
            issues.push_back({0, name + "." + key + ": " + e.what()});
        }
    };
    if (c.a_family == "expr") validate_expr(c.a_expr, FieldRole::Attenuation, "a_expr");
    if (c.a_family == "file" && c.a_file.empty())
        issues.push_back({0, name + ".a_file: file family needs a path"});
    if (c.k_family == "expr") validate_expr(c.k_expr, FieldRole::Scattering, "k_expr");
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text, std::vector<ConfigIssue>& issues) {
    using detail::Section;
    std::map<std::string, Section> sections;
    std::map<std::string, int> section_lines;
    {
        std::stringstream ss(text);
        std::string raw, current;
        int line_no = 0;
        while (std::getline(ss, raw)) {
            ++line_no;
            std::string line = detail::trim(raw);
            std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = detail::trim(line.substr(0, hash));
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') {
                    issues.push_back({line_no, "malformed section header"});
                    continue;
                }
                current = detail::trim(line.substr(1, line.size() - 2));
                static const std::set<std::string> known{
                    "geometry", "coefficients", "coefficients_tilde",
                    "gauge",    "grids",        "experiment",        "output"};
                if (!known.count(current)) {
                    issues.push_back({line_no, "unknown section [" + current + "]"});
                    current.clear();
                } else {
                    section_lines[current] = line_no;
                    sections[current];
                }
                continue;
            }
            std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                issues.push_back({line_no, "expected key = value"});
                continue;
            }
            if (current.empty()) {
                issues.push_back({line_no, "key outside of any section"});
                continue;
            }
            std::string key = detail::trim(line.substr(0, eq));
            std::string val = detail::trim(line.substr(eq + 1));
            if (sections[current].count(key))
                issues.push_back({line_no, "duplicate key '" + key + "'"});
            sections[current][key] = {val, line_no};
        }
    }

    RunConfig cfg;
    {
        detail::SectionReader r(sections["geometry"], issues);
        r.integer("dim", cfg.geometry.dim, 2);
        r.text("metric", cfg.geometry.metric, {"euclidean", "conformal", "expr"});
        r.num("bump_amp", cfg.geometry.bump_amp);
        r.num("bump_width", cfg.geometry.bump_width, true);
        r.text("metric_expr", cfg.geometry.metric_expr);
        r.num("r_m", cfg.geometry.r_m, true);
        r.num("r_m0", cfg.geometry.r_m0, true);
        r.num("step", cfg.geometry.step, true);
        r.finish("geometry");
        if (cfg.geometry.dim != 2 && cfg.geometry.dim != 3)
            issues.push_back({section_lines["geometry"], "dim must be 2 or 3"});
        if (cfg.geometry.r_m0 <= cfg.geometry.r_m)
            issues.push_back({section_lines["geometry"], "r_m0 must exceed r_m"});
        if (cfg.geometry.metric == "expr") {
            if (cfg.geometry.metric_expr.empty())
                issues.push_back({section_lines["geometry"], "metric_expr required for metric = expr"});
            else {
                try {
                    parse_field_expr(cfg.geometry.metric_expr, FieldRole::Metric, cfg.geometry.dim);
                } catch (const std::exception& e) {
                    issues.push_back({section_lines["geometry"], std::string("metric_expr: ") + e.what()});
                }
            }
        }
    }
    detail::read_coefficients(sections["coefficients"], cfg.coefficients, cfg.geometry.dim,
                              "coefficients", issues);
    cfg.has_tilde = sections.count("coefficients_tilde") > 0;
    cfg.coefficients_tilde = cfg.coefficients;
    if (cfg.has_tilde)
        detail::read_coefficients(sections["coefficients_tilde"], cfg.coefficients_tilde,
                                  cfg.geometry.dim, "coefficients_tilde", issues);
    {
        detail::SectionReader r(sections["gauge"], issues);
        r.text("kind", cfg.gauge.kind, {"none", "polynomial", "trial"});
        r.text("h_expr", cfg.gauge.h_expr);
        r.num("fd_delta", cfg.gauge.fd_delta, true);
        r.finish("gauge");
        if (cfg.gauge.kind == "polynomial") {
            try {
                parse_field_expr(cfg.gauge.h_expr, FieldRole::Metric, cfg.geometry.dim);
            } catch (const std::exception& e) {
                issues.push_back({section_lines["gauge"], std::string("h_expr: ") + e.what()});
            }
        }
    }
    {
        detail::SectionReader r(sections["grids"], issues);
        r.integer("boundary_points", cfg.grids.boundary_points, 4);
        r.integer("boundary_points_2", cfg.grids.boundary_points_2, 1);
        r.integer("directions", cfg.grids.directions, 4);
        r.integer("directions_2", cfg.grids.directions_2, 1);
        r.integer("phase_points", cfg.grids.phase_points, 5);
        r.num("path_step", cfg.grids.path_step, true);
        r.finish("grids");
    }
    {
        detail::SectionReader r(sections["experiment"], issues);
        r.text("mode", cfg.experiment.mode, {"n2", "n3"});
        r.list("deltas", cfg.experiment.deltas);
        r.integer("chain_samples", cfg.experiment.chain_samples, 1);
        r.num("tol", cfg.experiment.tol, true);
        r.integer("probe_positions", cfg.experiment.probe_positions, 1);
        r.integer("probe_directions", cfg.experiment.probe_directions, 1);
        r.integer("beam_cells", cfg.experiment.beam_cells, 2);
        r.integer("max_terms", cfg.experiment.max_terms, 1);
        r.num("solver_tol", cfg.experiment.solver_tol, true);
        r.finish("experiment");
        for (double d : cfg.experiment.deltas)
            if (d <= 0.0)
                issues.push_back({section_lines["experiment"], "deltas must be positive"});
    }
    {
        detail::SectionReader r(sections["output"], issues);
        r.text("report", cfg.output.report);
        r.text("csv", cfg.output.csv);
        r.text("field_dump", cfg.output.field_dump);
        r.finish("output");
    }
    if (cfg.coefficients.support_radius >= cfg.geometry.r_m)
        issues.push_back({0, "support_radius must be below r_m"});
    if (cfg.geometry.dim == 3 &&
        (cfg.grids.boundary_points_2 < 2 || cfg.grids.directions_2 < 2))
        issues.push_back({0, "dim = 3 needs boundary_points_2 and directions_2 >= 2"});
    return cfg;
}

inline RunConfig parse_config_or_throw(const std::string& text) {
    std::vector<ConfigIssue> issues;
    RunConfig cfg = parse_config(text, issues);
    if (!issues.empty()) {
        std::string msg = "config errors:";
        for (const ConfigIssue& e : issues)
            msg += "\n  line " + std::to_string(e.line) + ": " + e.message;
        throw config_error(msg);
    }
    return cfg;
}

// canonical printing; parse(print(cfg)) reproduces the structure
inline std::string print_config(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    auto vec_str = [&](const Vec& v, int dim) {
        std::ostringstream vs;
        vs.precision(17);
        for (int i = 0; i < dim; ++i) vs << (i ? "," : "") << v[i];
        return vs.str();
    };
    int dim = cfg.geometry.dim;
    os << "[geometry]\n";
    os << "dim = " << dim << "\n";
    os << "metric = " << cfg.geometry.metric << "\n";
    os << "bump_amp = " << cfg.geometry.bump_amp << "\n";
    os << "bump_width = " << cfg.geometry.bump_width << "\n";
    if (!cfg.geometry.metric_expr.empty()) os << "metric_expr = " << cfg.geometry.metric_expr << "\n";
    os << "r_m = " << cfg.geometry.r_m << "\n";
    os << "r_m0 = " << cfg.geometry.r_m0 << "\n";
    if (cfg.geometry.step > 0.0) os << "step = " << cfg.geometry.step << "\n";
    auto coeff = [&](const char* name, const CoefficientConfig& c) {
        os << "\n[" << name << "]\n";
        os << "a_family = " << c.a_family << "\n";
        os << "a_amp = " << c.a_amp << "\n";
        os << "a_center = " << vec_str(c.a_center, dim) << "\n";
        os << "a_width = " << c.a_width << "\n";
        os << "a_beta = " << c.a_beta << "\n";
        os << "a_axis = " << vec_str(c.a_axis, dim) << "\n";
        if (!c.a_expr.empty()) os << "a_expr = " << c.a_expr << "\n";
        if (!c.a_file.empty()) os << "a_file = " << c.a_file << "\n";
        os << "k_family = " << c.k_family << "\n";
        os << "k_amp = " << c.k_amp << "\n";
        os << "k_center = " << vec_str(c.k_center, dim) << "\n";
        os << "k_width = " << c.k_width << "\n";
        os << "k_aniso = " << c.k_aniso << "\n";
        if (!c.k_expr.empty()) os << "k_expr = " << c.k_expr << "\n";
        os << "support_radius = " << c.support_radius << "\n";
    };
    coeff("coefficients", cfg.coefficients);
    if (cfg.has_tilde) coeff("coefficients_tilde", cfg.coefficients_tilde);
    os << "\n[gauge]\n";
    os << "kind = " << cfg.gauge.kind << "\n";
    os << "h_expr = " << cfg.gauge.h_expr << "\n";
    os << "fd_delta = " << cfg.gauge.fd_delta << "\n";
    os << "\n[grids]\n";
    os << "boundary_points = " << cfg.grids.boundary_points << "\n";
    os << "boundary_points_2 = " << cfg.grids.boundary_points_2 << "\n";
    os << "directions = " << cfg.grids.directions << "\n";
    os << "directions_2 = " << cfg.grids.directions_2 << "\n";
    os << "phase_points = " << cfg.grids.phase_points << "\n";
    if (cfg.grids.path_step > 0.0) os << "path_step = " << cfg.grids.path_step << "\n";
    os << "\n[experiment]\n";
    os << "mode = " << cfg.experiment.mode << "\n";
    os << "deltas = ";
    for (std::size_t i = 0; i < cfg.experiment.deltas.size(); ++i)
        os << (i ? "," : "") << cfg.experiment.deltas[i];
    os << "\n";
    os << "chain_samples = " << cfg.experiment.chain_samples << "\n";
    if (cfg.experiment.tol > 0.0) os << "tol = " << cfg.experiment.tol << "\n";
    os << "probe_positions = " << cfg.experiment.probe_positions << "\n";
    os << "probe_directions = " << cfg.experiment.probe_directions << "\n";
    os << "beam_cells = " << cfg.experiment.beam_cells << "\n";
    os << "max_terms = " << cfg.experiment.max_terms << "\n";
    os << "solver_tol = " << cfg.experiment.solver_tol << "\n";
    os << "\n[output]\n";
    os << "report = " << cfg.output.report << "\n";
    os << "csv = " << cfg.output.csv << "\n";
    if (!cfg.output.field_dump.empty()) os << "field_dump = " << cfg.output.field_dump << "\n";
    return os.str();
}

// ---- builders ---------------------------------------------------------

inline Metric build_metric(const GeometryConfig& g) {
    if (g.metric == "euclidean") return Metric::euclidean(g.dim);
    if (g.metric == "conformal") {
        double amp = g.bump_amp, w2 = g.bump_width * g.bump_width;
        auto c = [amp, w2](const Vec& x) { return 1.0 + amp * std::exp(-dot(x, x) / w2); };
        auto dc = [amp, w2](const Vec& x) {
            return (-2.0 * amp * std::exp(-dot(x, x) / w2) / w2) * x;
        };
        return Metric::conformal(g.dim, c, dc);
    }
    return Metric::conformal_expr(g.dim, parse_field_expr(g.metric_expr, FieldRole::Metric, g.dim));
}

inline Manifold build_manifold(const GeometryConfig& g) {
    return Manifold(build_metric(g), g.r_m, g.r_m0, g.step);
}

// tabulated isotropic attenuation from a CSV tensor grid: header names the
// axes (x1,x2[,x3],value), rows in any order, multilinear interpolation
AttenuationCoeff load_attenuation_csv(const std::string& path, int dim, double rs);

inline CoefficientPair build_coefficients(const CoefficientConfig& c, int dim) {
    CoefficientPair cp;
    cp.support_radius = c.support_radius;
    if (c.a_family == "gaussian")
        cp.a = gaussian_attenuation(c.a_amp, c.a_center, c.a_width, c.support_radius);
    else if (c.a_family == "modulated")
        cp.a = modulated_attenuation(c.a_amp, c.a_center, c.a_width, c.support_radius, c.a_beta,
                                     c.a_axis);
    else if (c.a_family == "expr")
        cp.a = expr_attenuation(c.a_expr, dim, c.support_radius);
    else if (c.a_family == "file")
        cp.a = load_attenuation_csv(c.a_file, dim, c.support_radius);
    if (c.k_family == "cosine")
        cp.k = cosine_scattering(c.k_amp, c.k_center, c.k_width, c.support_radius, c.k_aniso, dim);
    else if (c.k_family == "expr")
        cp.k = expr_scattering(c.k_expr, dim, c.support_radius);
    return cp;
}

inline PhaseGrid build_phase_grid(const RunConfig& cfg) {
    return PhaseGrid{cfg.geometry.dim, cfg.geometry.r_m0, cfg.grids.phase_points,
                     DirectionGrid::make(cfg.geometry.dim, cfg.grids.directions,
                                         cfg.grids.directions_2)};
}

inline GammaGridSpec build_gamma_spec(const RunConfig& cfg) {
    return GammaGridSpec{cfg.grids.boundary_points, cfg.grids.boundary_points_2,
                         cfg.grids.directions, cfg.grids.directions_2};
}

inline AttenuationCoeff load_attenuation_csv(const std::string& path, int dim, double rs) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open coefficient file: " + path);
    std::string header;
    if (!std::getline(in, header)) throw config_error("empty coefficient file: " + path);
    std::vector<std::string> cols;
    {
        std::stringstream hs(header);
        std::string c;
        while (std::getline(hs, c, ',')) cols.push_back(detail::trim(c));
    }
    if (int(cols.size()) != dim + 1 || cols.back() != "value")
        throw config_error(path + ": header must name " + std::to_string(dim) +
                           " axes then 'value'");
    std::vector<std::array<double, 4>> rows;
    std::string line;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string part;
        std::array<double, 4> row{};
        int i = 0;
        while (std::getline(ls, part, ',')) {
            if (i > dim || !detail::to_double(detail::trim(part), row[i]))
                throw config_error(path + ":" + std::to_string(line_no) + ": bad row");
            ++i;
        }
        if (i != dim + 1)
            throw config_error(path + ":" + std::to_string(line_no) + ": bad row");
        rows.push_back(row);
    }
    // recover the tensor axes
    std::array<std::vector<double>, 3> axes;
    for (int d = 0; d < dim; ++d) {
        std::set<double> vals;
        for (const auto& r : rows) vals.insert(r[d]);
        axes[d].assign(vals.begin(), vals.end());
        if (axes[d].size() < 2) throw config_error(path + ": axis " + cols[d] + " needs >= 2 values");
    }
    std::size_t expected = 1;
    for (int d = 0; d < dim; ++d) expected *= axes[d].size();
    if (rows.size() != expected)
        throw config_error(path + ": rows do not form a full tensor grid");
    std::vector<double> table(expected, 0.0);
    auto axis_index = [&](int d, double v) -> std::size_t {
        auto it = std::lower_bound(axes[d].begin(), axes[d].end(), v);
        return std::size_t(it - axes[d].begin());
    };
    for (const auto& r : rows) {
        std::size_t idx = 0;
        for (int d = 0; d < dim; ++d) idx = idx * axes[d].size() + axis_index(d, r[d]);
        table[idx] = r[dim];
    }
    auto ax = std::make_shared<std::array<std::vector<double>, 3>>(axes);
    auto tb = std::make_shared<std::vector<double>>(std::move(table));
    AttenuationCoeff out;
    out.f = [ax, tb, dim, rs](const Vec& x, const Vec&) -> double {
        if (norm(x) >= rs) return 0.0;
        std::size_t i0[3] = {};
        double u[3] = {};
        for (int d = 0; d < dim; ++d) {
            const std::vector<double>& a = (*ax)[d];
            double v = std::clamp(x[d], a.front(), a.back());
            std::size_t hi = std::size_t(std::upper_bound(a.begin(), a.end(), v) - a.begin());
            hi = std::clamp<std::size_t>(hi, 1, a.size() - 1);
            i0[d] = hi - 1;
            u[d] = (v - a[hi - 1]) / (a[hi] - a[hi - 1]);
        }
        double val = 0.0;
        int corners = 1 << dim;
        for (int c = 0; c < corners; ++c) {
            double w = 1.0;
            std::size_t idx = 0;
            for (int d = 0; d < dim; ++d) {
                int bit = (c >> d) & 1;
                w *= bit ? u[d] : 1.0 - u[d];
                idx = idx * (*ax)[d].size() + i0[d] + bit;
            }
            val += w * (*tb)[idx];
        }
        return val;
    };
    return out;
}

}  // namespace geotransport
