#include "driftlab/cli.hpp"

#include "driftlab/errors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace driftlab {

namespace {

using nlohmann::json;

// Allowed keys per section; anything else is a typo and is rejected.
const std::map<std::string, std::set<std::string>> kSchema = {
    {"", {"seed", "topology", "model", "run", "experiment"}},
    {"topology", {"kind", "K", "edge_probability", "graph_seed", "edges", "matrix"}},
    {"model",
     {"family", "M", "hessian_mode", "hessian_eigenvalues", "hessian_jitter", "minimizer_spread", "dataset_size",
      "noise_mode", "noise_scale", "tilts", "minimum", "seed", "hessians", "minimizers", "noise_covariances"}},
    {"run", {"mu", "B", "n_steps", "init", "sigma0", "record_every", "lr_drops"}},
    {"experiment",
     {"algorithms", "reps", "mu_grid", "batches", "eta", "batch_scale", "n_max", "n_dirs", "alpha_grid", "point",
      "workers"}},
};

void check_keys(const json& j) {
    if (!j.is_object()) throw ValidationError("config", "config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!kSchema.at("").count(key)) throw ValidationError(key, "unknown key '" + key + "'");
        if (key == "seed") continue;
        if (!value.is_object()) throw ValidationError(key, "section '" + key + "' must be an object");
        const auto& allowed = kSchema.at(key);
        for (const auto& [sub, unused] : value.items()) {
            if (!allowed.count(sub)) throw ValidationError(key + "." + sub, "unknown key '" + key + "." + sub + "'");
        }
    }
}

template <class T>
T read(const json& section, const std::string& name, const std::string& prefix, T fallback) {
    if (!section.contains(name)) return fallback;
    try {
        return section.at(name).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(prefix + "." + name, "wrong type for '" + prefix + "." + name + "'");
    }
}

template <class T>
std::optional<T> read_optional(const json& section, const std::string& name, const std::string& prefix) {
    if (!section.contains(name)) return std::nullopt;
    return read<T>(section, name, prefix, T{});
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows, const std::string& key) {
    if (rows.empty()) throw ValidationError(key, "matrix must not be empty");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw ValidationError(key, "matrix rows differ in length");
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class E>
E parse_enum(const json& section, const std::string& name, const std::string& prefix, E fallback,
             const std::map<std::string, E>& values) {
    if (!section.contains(name)) return fallback;
    const auto text = read<std::string>(section, name, prefix, "");
    const auto it = values.find(text);
    if (it == values.end()) throw ValidationError(prefix + "." + name, "invalid value '" + text + "'");
    return it->second;
}

ExperimentConfig config_from_json(const json& root) {
    check_keys(root);
    ExperimentConfig cfg;
    const json empty = json::object();
    cfg.seed = read<std::uint64_t>(root, "seed", "", 0);

    const json& t = root.contains("topology") ? root.at("topology") : empty;
    try {
        if (t.contains("kind")) cfg.topology.kind = parse_combination_kind(read<std::string>(t, "kind", "topology", ""));
    } catch (const ValidationError& e) {
        throw ValidationError("topology.kind", e.what());
    }
    cfg.topology.agents = read<int>(t, "K", "topology", cfg.topology.agents);
    cfg.topology.edge_probability = read<double>(t, "edge_probability", "topology", cfg.topology.edge_probability);
    cfg.topology.graph_seed = read_optional<std::uint64_t>(t, "graph_seed", "topology");
    if (auto edges = read_optional<std::vector<std::vector<int>>>(t, "edges", "topology")) {
        for (const auto& e : *edges) {
            if (e.size() != 2) throw ValidationError("topology.edges", "edges must be [i, j] pairs");
            cfg.topology.edges.emplace_back(e[0], e[1]);
        }
    }
    if (auto m = read_optional<std::vector<std::vector<double>>>(t, "matrix", "topology")) {
        cfg.topology.matrix = to_matrix(*m, "topology.matrix");
    }

    const json& m = root.contains("model") ? root.at("model") : empty;
    cfg.model.family = parse_enum<RiskFamily>(m, "family", "model", RiskFamily::quadratic,
                                              {{"quadratic", RiskFamily::quadratic}, {"double_well", RiskFamily::double_well}});
    const std::uint64_t model_seed = read<std::uint64_t>(m, "seed", "model", derive_seed(cfg.seed, 0x6d6f64656cULL));
    QuadraticSpec& q = cfg.model.quadratic;
    q.seed = model_seed;
    q.dim = read<int>(m, "M", "model", q.dim);
    q.hessian_mode = parse_enum<HessianMode>(m, "hessian_mode", "model", q.hessian_mode,
                                             {{"common", HessianMode::common}, {"heterogeneous", HessianMode::heterogeneous}});
    q.hessian_eigenvalues = read<std::vector<double>>(m, "hessian_eigenvalues", "model", q.hessian_eigenvalues);
    q.hessian_jitter = read<double>(m, "hessian_jitter", "model", q.hessian_jitter);
    q.minimizer_spread = read<double>(m, "minimizer_spread", "model", q.minimizer_spread);
    q.dataset_size = read<int>(m, "dataset_size", "model", q.dataset_size);
    q.noise_mode = parse_enum<NoiseMode>(m, "noise_mode", "model", q.noise_mode,
                                         {{"additive", NoiseMode::additive}, {"dataset", NoiseMode::dataset}});
    q.noise_scale = read<double>(m, "noise_scale", "model", q.noise_scale);
    if (auto hs = read_optional<std::vector<std::vector<std::vector<double>>>>(m, "hessians", "model")) {
        q.hessians.emplace();
        for (const auto& h : *hs) q.hessians->push_back(to_matrix(h, "model.hessians"));
    }
    if (auto ws = read_optional<std::vector<std::vector<double>>>(m, "minimizers", "model")) {
        q.minimizers.emplace();
        for (const auto& w : *ws) q.minimizers->push_back(to_vector(w));
    }
    if (auto rs = read_optional<std::vector<std::vector<std::vector<double>>>>(m, "noise_covariances", "model")) {
        q.noise_covariances.emplace();
        for (const auto& r : *rs) q.noise_covariances->push_back(to_matrix(r, "model.noise_covariances"));
    }
    DoubleWellSpec& dw = cfg.model.double_well;
    dw.seed = model_seed;
    dw.tilts = read<std::vector<double>>(m, "tilts", "model", dw.tilts);
    dw.dataset_size = read<int>(m, "dataset_size", "model", dw.dataset_size);
    dw.noise_scale = read<double>(m, "noise_scale", "model", dw.noise_scale);
    cfg.model.minimum = parse_enum<MinimumSelector>(
        m, "minimum", "model", MinimumSelector::automatic,
        {{"plus", MinimumSelector::plus}, {"minus", MinimumSelector::minus}, {"auto", MinimumSelector::automatic}});

    const json& r = root.contains("run") ? root.at("run") : empty;
    cfg.run.mu = read<double>(r, "mu", "run", cfg.run.mu);
    cfg.run.batch = read<int>(r, "B", "run", cfg.run.batch);
    cfg.run.n_steps = read<int>(r, "n_steps", "run", cfg.run.n_steps);
    cfg.run.init = parse_enum<InitKind>(r, "init", "run", cfg.run.init,
                                        {{"exact", InitKind::exact}, {"gaussian", InitKind::gaussian}});
    cfg.run.sigma0 = read<double>(r, "sigma0", "run", cfg.run.sigma0);
    cfg.run.record_every = read<int>(r, "record_every", "run", cfg.run.record_every);
    cfg.run.lr_drops = read<bool>(r, "lr_drops", "run", cfg.run.lr_drops);
    cfg.run.seed = cfg.seed;

    const json& x = root.contains("experiment") ? root.at("experiment") : empty;
    if (auto algs = read_optional<std::vector<std::string>>(x, "algorithms", "experiment")) {
        cfg.algorithms.clear();
        for (const auto& a : *algs) {
            try {
                cfg.algorithms.push_back(parse_algorithm(a));
            } catch (const ValidationError& e) {
                throw ValidationError("experiment.algorithms", e.what());
            }
        }
    }
    cfg.reps = read<int>(x, "reps", "experiment", cfg.reps);
    cfg.mu_grid = read<std::vector<double>>(x, "mu_grid", "experiment", cfg.mu_grid);
    cfg.batches = read<std::vector<int>>(x, "batches", "experiment", cfg.batches);
    cfg.eta = read<double>(x, "eta", "experiment", cfg.eta);
    cfg.batch_scale = read_optional<double>(x, "batch_scale", "experiment");
    cfg.n_max = read_optional<int>(x, "n_max", "experiment");
    cfg.n_dirs = read<int>(x, "n_dirs", "experiment", cfg.n_dirs);
    cfg.alpha_grid = read<std::vector<double>>(x, "alpha_grid", "experiment", cfg.alpha_grid);
    if (auto p = read_optional<std::vector<double>>(x, "point", "experiment")) cfg.point = to_vector(*p);
    cfg.workers = read<unsigned>(x, "workers", "experiment", 0);

    if (cfg.model.family == RiskFamily::quadratic && cfg.model.quadratic.dim < 1) {
        throw ValidationError("model.M", "M must be at least 1");
    }
    cfg.check();
    return cfg;
}

void apply_override(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("--set", "override must look like key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &root;
    std::string::size_type start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ValidationError(key, "malformed override key '" + key + "'");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        if (!node->contains(part)) (*node)[part] = json::object();
        node = &(*node)[part];
        if (!node->is_object()) throw ValidationError(key, "override path crosses a non-object value");
        start = dot + 1;
    }
}

std::string one_line(std::string text) {
    for (char& c : text) {
        if (c == '\n' || c == '\r') c = ' ';
        if (c == '"') c = '\'';
    }
    return text;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out.flush()) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

using Outputs = std::vector<std::pair<std::string, CsvTable>>;

Outputs run_topology(const ExperimentConfig& cfg) {
    const CombinationMatrix a = build_topology(cfg);
    const SpectralDecomposition s = spectral_decompose(a);
    CsvTable eig{{"index", "eigenvalue"}, {}};
    for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
        eig.add({std::to_string(i + 1), format_number(s.eigenvalues(i))});
    }
    CsvTable mat{{}, {}};
    for (Eigen::Index j = 0; j < a.weights.cols(); ++j) mat.header.push_back("a" + std::to_string(j + 1));
    for (Eigen::Index i = 0; i < a.weights.rows(); ++i) {
        std::vector<std::string> row;
        for (Eigen::Index j = 0; j < a.weights.cols(); ++j) row.push_back(format_number(a.weights(i, j)));
        mat.add(std::move(row));
    }
    CsvTable checks{{"check", "passed", "detail"}, {}};
    for (const auto& c : validate(a).checks) checks.add({c.name, c.passed ? "1" : "0", c.detail});
    return {{"eigenvalues.csv", eig}, {"combination_matrix.csv", mat}, {"validation.csv", checks}};
}

Outputs run_oracle(const ExperimentConfig& cfg) {
    Outputs out{{"oracle.csv", oracle_table(cfg)}};
    try {
        out.emplace_back("steady_state.csv", to_table(steady_state_experiment(cfg)));
    } catch (const DivergenceError&) {
        // No fixed point to report for a non-contractive recursion; the series is still valid.
    }
    return out;
}

Outputs run_sweep(const ExperimentConfig& cfg) {
    const SweepResult r = mu_sweep(cfg);
    CsvTable slopes{{"alg", "abs_err_slope", "rel_err_slope"}, {}};
    for (const auto& s : r.slopes) slopes.add({to_string(s.alg), format_number(s.absolute), format_number(s.relative)});
    return {{"sweep.csv", to_table(r.rows)}, {"slopes.csv", slopes}};
}

Outputs run_escape(const ExperimentConfig& cfg) {
    const auto cells = escape_study(cfg);
    return {{"escape.csv", to_table(cells)}, {"escape_summary.csv", escape_summary(cells)}};
}

Outputs run_flatness(const ExperimentConfig& cfg) {
    const NetworkRiskModel model = build_model(cfg);
    const Vector w = cfg.point ? *cfg.point : minimizer_summary(model, cfg.model.minimum).w_star;
    std::vector<double> grid = cfg.alpha_grid;
    if (grid.empty()) {
        for (int i = -20; i <= 20; ++i) grid.push_back(0.1 * i);
    }
    Rng rng = make_rng(cfg.seed, 0x666c6174ULL);
    return {{"flatness.csv", to_table(flatness_profile(model, w, cfg.n_dirs, grid, rng))}};
}

}  // namespace

LoadedConfig load_config(const std::string& json_text, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed) {
    json root = json::parse(json_text.empty() ? std::string("{}") : json_text, nullptr, false);
    if (root.is_discarded()) throw ValidationError("config", "config is not valid JSON");
    if (!root.is_object()) throw ValidationError("config", "config must be a JSON object");
    for (const auto& o : overrides) apply_override(root, o);
    LoadedConfig out;
    if (seed) {
        root["seed"] = *seed;
    } else if (!root.contains("seed")) {
        std::random_device rd;
        root["seed"] = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
        out.seed_generated = true;
    }
    out.config = config_from_json(root);
    out.effective_json = root.dump(2) + "\n";
    return out;
}

int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Distributed SGD escape-efficiency toolkit", "driftlab"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string output = "out";
    bool deterministic = false;
    unsigned workers = 0;
    app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", overrides, "Override a config value, e.g. --set run.mu=0.01")->take_all();
    app.add_option("--seed", seed, "64-bit seed (generated and printed when omitted)");
    app.add_option("--output", output, "Output directory");
    app.add_flag("--deterministic", deterministic, "Omit timestamps so reruns are byte-identical");
    app.add_option("--workers", workers, "Worker threads (default: DRIFTLAB_WORKERS or all cores)");

    const std::map<std::string, std::string> commands = {
        {"topology", "Combination matrix, eigenvalues and validation report"},
        {"theory", "Closed-form excess-risk predictions"},
        {"oracle", "Exact moment propagation of the linear error recursion"},
        {"simulate", "Monte Carlo ensemble of the true recursions"},
        {"compare", "Theory vs oracle vs Monte Carlo"},
        {"sweep", "Step-size sweep of the theory-vs-oracle error"},
        {"escape", "Escape statistics on the double-well model"},
        {"flatness", "Random-direction risk profile"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);

    try {
        std::vector<std::string> args;
        for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error kind=validation key=argv message=\"" << one_line(e.what()) << "\"\n";
        return 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        std::string text;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            std::stringstream buf;
            buf << in.rdbuf();
            text = buf.str();
        }
        LoadedConfig loaded = load_config(text, overrides, seed);
        ExperimentConfig& cfg = loaded.config;
        if (workers) cfg.workers = workers;
        cfg.deterministic = deterministic;
        if (loaded.seed_generated) out << "seed " << cfg.seed << '\n';

        Outputs files;
        if (command == "topology") files = run_topology(cfg);
        else if (command == "theory") files = {{"theory.csv", theory_table(cfg)}};
        else if (command == "oracle") files = run_oracle(cfg);
        else if (command == "simulate") files = {{"simulate.csv", simulate_table(cfg)}};
        else if (command == "compare") files = {{"compare.csv", to_table(compare_experiment(cfg))}};
        else if (command == "sweep") files = run_sweep(cfg);
        else if (command == "escape") files = run_escape(cfg);
        else if (command == "flatness") files = run_flatness(cfg);

        const std::filesystem::path dir(output);
        for (const auto& [name, table] : files) write_csv_atomic(dir / name, table, deterministic);
        write_text_atomic(dir / "config.json", loaded.effective_json);
        for (const auto& [name, table] : files) out << (dir / name).string() << '\n';
        return 0;
    } catch (const ValidationError& e) {
        err << "error kind=validation key=" << (e.key().empty() ? "-" : e.key()) << " message=\"" << one_line(e.what())
            << "\"\n";
        return 1;
    } catch (const DivergenceError& e) {
        err << "error kind=divergence key=- message=\"" << one_line(e.what()) << "\"\n";
        return 2;
    } catch (const ConvergenceError& e) {
        err << "error kind=convergence key=- message=\"" << one_line(e.what()) << "\"\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error kind=runtime key=- message=\"" << one_line(e.what()) << "\"\n";
        return 2;
    }
}

}  // namespace driftlab
