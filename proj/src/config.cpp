#include "fpgame/config.hpp"

#include "fpgame/errors.hpp"
#include "fpgame/hash.hpp"
#include "fpgame/io.hpp"


#include <cmath>
#include <fstream>
#include <sstream>

namespace fpgame {

namespace {

using nlohmann::json;

std::string at(const std::string& path, std::size_t index) { return path + "[" + std::to_string(index) + "]"; }

const json& require(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) throw ConfigError(path + ": must be an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ConfigError((path.empty() ? key : path + "." + key) + ": missing");
    return *it;
}

const json* optional(const json& obj, const std::string& key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path + ": must be finite");
    return x;
}

std::size_t count(const json& v, const std::string& path) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path + ": must be an integer");
    if (v.get<long long>() < 0) throw ConfigError(path + ": must be nonnegative");
    return v.get<std::size_t>();
}

std::vector<double> numbers(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": must be an array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], at(path, i)));
    return out;
}

Vector vector_of(const json& v, const std::string& path) {
    const auto xs = numbers(v, path);
    return Eigen::Map<const Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
}

Matrix matrix(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) throw ConfigError(path + ": must be a non-empty array of rows");
    const auto rows = v.size();
    std::size_t cols = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!v[r].is_array() || v[r].empty()) throw ConfigError(at(path, r) + ": must be a non-empty array");
        if (r == 0) cols = v[r].size();
        if (v[r].size() != cols) throw ConfigError(at(path, r) + ": ragged matrix row");
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                number(v[r][c], at(at(path, r), c));
    return m;
}

struct SystemParts {
    MultiChannelSystem system;
    FeedbackProfile profile;
};

SystemParts parse_system(const json& doc) {
    const std::string path = "system";
    const json& block = require(doc, "system", "");
    const auto d = count(require(block, "d", path), "system.d");
    if (d < 1) throw ConfigError("system.d: must be >= 1");
    Matrix A = matrix(require(block, "A", path), "system.A");
    if (static_cast<std::size_t>(A.rows()) != d || static_cast<std::size_t>(A.cols()) != d)
        throw ConfigError("system.A: expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");

    const json& channels = require(block, "channels", path);
    if (!channels.is_array() || channels.empty()) throw ConfigError("system.channels: must be a non-empty array");
    std::vector<Matrix> B;
    std::vector<Matrix> gains;
    for (std::size_t j = 0; j < channels.size(); ++j) {
        const std::string cpath = at("system.channels", j);
        B.push_back(matrix(require(channels[j], "B", cpath), cpath + ".B"));
        if (static_cast<std::size_t>(B.back().rows()) != d) throw ConfigError(cpath + ".B: must have d rows");
        Matrix L;
        if (const json* g = optional(channels[j], "gains"))
            L = matrix(*g, cpath + ".gains");
        else
            L = Matrix::Zero(B.back().cols(), static_cast<Eigen::Index>(d));
        if (L.rows() != B.back().cols() || static_cast<std::size_t>(L.cols()) != d)
            throw ConfigError(cpath + ".gains: expected shape " + std::to_string(B.back().cols()) + "x" +
                              std::to_string(d));
        gains.push_back(std::move(L));
    }

    std::vector<CoefficientSegment> segments{{0.0, A, B}};
    if (const json* sched = optional(block, "schedule")) {
        if (!sched->is_array()) throw ConfigError("system.schedule: must be an array");
        for (std::size_t k = 0; k < sched->size(); ++k) {
            const std::string spath = at("system.schedule", k);
            const auto& entry = (*sched)[k];
            CoefficientSegment seg;
            seg.start = number(require(entry, "t", spath), spath + ".t");
            if (!(seg.start > segments.back().start)) throw ConfigError(spath + ".t: must be increasing and > 0");
            seg.A = matrix(require(entry, "A", spath), spath + ".A");
            const json& bs = require(entry, "B", spath);
            if (!bs.is_array() || bs.size() != B.size())
                throw ConfigError(spath + ".B: expected one matrix per channel");
            for (std::size_t j = 0; j < bs.size(); ++j) seg.B.push_back(matrix(bs[j], at(spath + ".B", j)));
            segments.push_back(std::move(seg));
        }
    }
    MultiChannelSystem sys(std::move(segments));
    FeedbackProfile profile(std::move(gains));
    check_profile(sys, profile);
    return {std::move(sys), std::move(profile)};
}

DomainBlock parse_domain(const json& doc, int d) {
    const json& block = require(doc, "domain", "");
    Vector lower = vector_of(require(block, "lower", "domain"), "domain.lower");
    Vector upper = vector_of(require(block, "upper", "domain"), "domain.upper");
    const json& cells_json = require(block, "cells_per_axis", "domain");
    if (!cells_json.is_array()) throw ConfigError("domain.cells_per_axis: must be an array");
    std::vector<std::size_t> cells;
    for (std::size_t k = 0; k < cells_json.size(); ++k)
        cells.push_back(count(cells_json[k], at("domain.cells_per_axis", k)));
    if (lower.size() != d) throw ConfigError("domain.lower: expected " + std::to_string(d) + " components");
    DomainBlock out{Partition(lower, upper, cells), 0.05};
    if (const json* lt = optional(block, "leak_tol")) out.leak_tol = number(*lt, "domain.leak_tol");
    if (!(out.leak_tol >= 0.0 && out.leak_tol <= 1.0)) throw ConfigError("domain.leak_tol: must lie in [0, 1]");
    return out;
}

UlamBlock parse_ulam(const json& doc) {
    UlamBlock out;
    const json* block = optional(doc, "ulam");
    if (!block) return out;
    if (const json* q = optional(*block, "samples_per_axis")) out.samples_per_axis = count(*q, "ulam.samples_per_axis");
    if (out.samples_per_axis < 2) throw ConfigError("ulam.samples_per_axis: must be >= 2");
    if (const json* t = optional(*block, "t_step")) out.t_step = number(*t, "ulam.t_step");
    if (!(out.t_step > 0.0)) throw ConfigError("ulam.t_step: must be > 0");
    if (const json* s = optional(*block, "steps_per_unit_time"))
        out.steps_per_unit_time = number(*s, "ulam.steps_per_unit_time");
    if (!(out.steps_per_unit_time > 0.0)) throw ConfigError("ulam.steps_per_unit_time: must be > 0");
    return out;
}

StationaryOptions parse_stationary(const json& doc) {
    StationaryOptions out;
    const json* block = optional(doc, "stationary");
    if (!block) return out;
    if (const json* v = optional(*block, "tol")) out.tol = number(*v, "stationary.tol");
    if (!(out.tol > 0.0)) throw ConfigError("stationary.tol: must be > 0");
    if (const json* v = optional(*block, "max_iter")) out.max_iter = count(*v, "stationary.max_iter");
    if (out.max_iter < 1) throw ConfigError("stationary.max_iter: must be >= 1");
    if (const json* v = optional(*block, "cesaro")) {
        if (!v->is_boolean()) throw ConfigError("stationary.cesaro: must be a boolean");
        out.cesaro = v->get<bool>();
    }
    return out;
}

GameBlock parse_game(const json& block, const MultiChannelSystem& sys) {
    GameBlock out;
    const json& cands = require(block, "candidates", "game");
    if (!cands.is_array() || cands.size() != sys.channels())
        throw ConfigError("game.candidates: expected one candidate list per channel");
    for (std::size_t j = 0; j < cands.size(); ++j) {
        const std::string cpath = at("game.candidates", j);
        if (!cands[j].is_array() || cands[j].empty()) throw ConfigError(cpath + ": must be a non-empty array");
        std::vector<Matrix> list;
        for (std::size_t k = 0; k < cands[j].size(); ++k) list.push_back(matrix(cands[j][k], at(cpath, k)));
        out.space.candidates.push_back(std::move(list));
    }
    if (const json* f = optional(block, "stability_filter")) {
        if (!f->is_boolean()) throw ConfigError("game.stability_filter: must be a boolean");
        out.space.stability_filter = f->get<bool>();
    }
    out.space.validate(sys);

    out.time_grid = numbers(require(block, "time_grid", "game"), "game.time_grid");
    if (out.time_grid.empty()) throw ConfigError("game.time_grid: must not be empty");
    for (std::size_t k = 0; k < out.time_grid.size(); ++k) {
        if (k == 0 && !(out.time_grid[0] > 0.0)) throw ConfigError("game.time_grid[0]: must be > 0");
        if (k > 0 && !(out.time_grid[k] > out.time_grid[k - 1]))
            throw ConfigError(at("game.time_grid", k) + ": must be increasing");
    }
    out.trace_grid = out.time_grid;
    if (const json* tg = optional(block, "trace_grid")) {
        out.trace_grid = numbers(*tg, "game.trace_grid");
        if (out.trace_grid.empty()) throw ConfigError("game.trace_grid: must not be empty");
        for (std::size_t k = 0; k < out.trace_grid.size(); ++k) {
            if (k == 0 && !(out.trace_grid[0] > 0.0)) throw ConfigError("game.trace_grid[0]: must be > 0");
            if (k > 0 && !(out.trace_grid[k] > out.trace_grid[k - 1]))
                throw ConfigError(at("game.trace_grid", k) + ": must be increasing");
        }
    }
    if (const json* v = optional(block, "tol")) out.tol = number(*v, "game.tol");
    if (!(out.tol > 0.0)) throw ConfigError("game.tol: must be > 0");
    if (const json* v = optional(block, "max_rounds")) out.max_rounds = count(*v, "game.max_rounds");
    if (out.max_rounds < 1) throw ConfigError("game.max_rounds: must be >= 1");
    if (const json* v = optional(block, "decay_threshold")) out.decay_threshold = number(*v, "game.decay_threshold");

    if (const json* ref = optional(block, "reference_density")) {
        if (ref->is_string() && ref->get<std::string>() == "uniform") {
        } else if (ref->is_object() && ref->contains("csv") && (*ref)["csv"].is_string()) {
            out.reference_density = (*ref)["csv"].get<std::string>();
        } else {
            throw ConfigError("game.reference_density: must be \"uniform\" or {\"csv\": path}");
        }
    }
    if (const json* extra = optional(block, "extra_densities")) {
        if (!extra->is_array()) throw ConfigError("game.extra_densities: must be an array of CSV paths");
        for (std::size_t k = 0; k < extra->size(); ++k) {
            if (!(*extra)[k].is_string()) throw ConfigError(at("game.extra_densities", k) + ": must be a path");
            out.extra_densities.push_back((*extra)[k].get<std::string>());
        }
    }
    out.initial.assign(sys.channels(), 0);
    if (const json* init = optional(block, "initial")) {
        if (!init->is_array() || init->size() != sys.channels())
            throw ConfigError("game.initial: expected one candidate index per channel");
        for (std::size_t j = 0; j < init->size(); ++j) {
            out.initial[j] = count((*init)[j], at("game.initial", j));
            if (out.initial[j] >= out.space.candidates[j].size())
                throw ConfigError(at("game.initial", j) + ": candidate index out of range");
        }
    }
    return out;
}

PerturbBlock parse_perturb(const json& block, int d) {
    PerturbBlock out;
    out.noise.sigma = matrix(require(block, "sigma", "perturb"), "perturb.sigma");
    if (out.noise.sigma.rows() != d || out.noise.sigma.cols() != d)
        throw ConfigError("perturb.sigma: expected a d x d matrix");
    out.noise.epsilons = numbers(require(block, "epsilon_list", "perturb"), "perturb.epsilon_list");
    out.noise.validate(d);
    if (const json* v = optional(block, "h")) out.paths.h = number(*v, "perturb.h");
    if (const json* v = optional(block, "n_steps")) out.paths.n_steps = count(*v, "perturb.n_steps");
    if (const json* v = optional(block, "n_paths")) out.paths.n_paths = count(*v, "perturb.n_paths");
    if (const json* v = optional(block, "seed")) {
        if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
            throw ConfigError("perturb.seed: must be a nonnegative integer");
        out.paths.seed = v->get<std::uint64_t>();
    }
    out.paths.validate();
    out.x0 = Vector::Zero(d);
    if (const json* v = optional(block, "x0")) {
        out.x0 = vector_of(*v, "perturb.x0");
        if (out.x0.size() != d) throw ConfigError("perturb.x0: expected d components");
    }
    if (const json* v = optional(block, "kl_floor")) out.kl_floor = number(*v, "perturb.kl_floor");
    if (!(out.kl_floor >= 0.0)) throw ConfigError("perturb.kl_floor: must be >= 0");
    return out;
}

OutputBlock parse_output(const json& doc) {
    OutputBlock out;
    const json* block = optional(doc, "output");
    if (!block) return out;
    if (const json* dir = optional(*block, "directory")) {
        if (!dir->is_string()) throw ConfigError("output.directory: must be a string");
        out.directory = dir->get<std::string>();
    }
    if (const json* f = optional(*block, "formats")) {
        if (!f->is_array()) throw ConfigError("output.formats: must be an array");
        out.formats.clear();
        for (std::size_t k = 0; k < f->size(); ++k) {
            if (!(*f)[k].is_string()) throw ConfigError(at("output.formats", k) + ": must be a string");
            const auto name = (*f)[k].get<std::string>();
            if (name != "csv" && name != "json")
                throw ConfigError(at("output.formats", k) + ": unknown format '" + name + "'");
            out.formats.push_back(name);
        }
    }
    return out;
}

}  // namespace

std::size_t UlamBlock::samples_per_cell(int dim) const {
    std::size_t n = 1;
    for (int k = 0; k < dim; ++k) n *= samples_per_axis;
    return n;
}

ScenarioConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("config: top level must be an object");
    auto [sys, profile] = parse_system(doc);
    const int d = sys.dim();
    ScenarioConfig cfg{std::move(sys), std::move(profile), parse_domain(doc, d), parse_ulam(doc),
                       parse_stationary(doc), std::nullopt, std::nullopt, parse_output(doc), base_dir, 0};
    if (const json* g = optional(doc, "game")) cfg.game = parse_game(*g, cfg.system);
    if (const json* p = optional(doc, "perturb")) cfg.perturb = parse_perturb(*p, d);
    Fnv1a h;
    h.update(doc.dump());
    cfg.hash = h.digest();
    return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    auto cfg = parse_config(doc, path.parent_path());
    Fnv1a h;
    h.update(text);
    cfg.hash = h.digest();
    return cfg;
}

GameConfig make_game_config(const ScenarioConfig& cfg, unsigned threads) {
    if (!cfg.game) throw ConfigError("game: block is required for this subcommand");
    const auto& g = *cfg.game;
    GameConfig out(cfg.domain.partition, g.time_grid);
    if (!g.reference_density.empty())
        out.reference = read_density(cfg.base_dir / g.reference_density);
    for (const auto& p : g.extra_densities) out.extra_densities.push_back(read_density(cfg.base_dir / p));
    out.tol = g.tol;
    out.max_rounds = g.max_rounds;
    out.samples_per_cell = cfg.ulam.samples_per_cell(cfg.system.dim());
    out.leak_tol = cfg.domain.leak_tol;
    out.steps_per_unit_time = cfg.ulam.steps_per_unit_time;
    out.stationary = cfg.stationary;
    out.threads = threads;
    out.validate();
    return out;
}

}  // namespace fpgame
