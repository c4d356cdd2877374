#pragma once

// JSON scenario files. Every validation failure is a ConfigError whose message
// starts with the JSON path of the offending value, e.g.
// "game.time_grid[2]: must be increasing".

#include "fpgame/game.hpp"
#include "fpgame/perturb.hpp"
#include "fpgame/system.hpp"
#include "fpgame/transfer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fpgame {

struct DomainBlock {
    Partition partition;
    double leak_tol = 0.05;
};

struct UlamBlock {
    std::size_t samples_per_axis = 4;
    double t_step = 0.5;
    double steps_per_unit_time = 200.0;

    std::size_t samples_per_cell(int dim) const;
};

struct GameBlock {
    StrategySpace space;
    std::vector<double> time_grid;
    std::vector<double> trace_grid;  ///< entropy-trace times; defaults to time_grid
    double tol = 1e-9;
    std::size_t max_rounds = 50;
    /// Empty means uniform; otherwise a density CSV path relative to the config file.
    std::string reference_density;
    std::vector<std::string> extra_densities;
    StrategyChoice initial;
    /// Final relative entropy the entropy-decay trace must fall below.
    double decay_threshold = 0.05;
};

struct PerturbBlock {
    NoiseSpec noise;
    SdePathConfig paths;
    Vector x0;
    double kl_floor = 1e-12;
};

struct OutputBlock {
    std::string directory = "out";
    std::vector<std::string> formats{"csv", "json"};
};

struct ScenarioConfig {
    MultiChannelSystem system;
    FeedbackProfile profile;
    DomainBlock domain;
    UlamBlock ulam;
    StationaryOptions stationary;
    std::optional<GameBlock> game;
    std::optional<PerturbBlock> perturb;
    OutputBlock output;
    std::filesystem::path base_dir;
    std::uint64_t hash = 0;
};

ScenarioConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Reads and parses a config file; the hash covers the raw file bytes.
ScenarioConfig load_config(const std::filesystem::path& path);

/// Game configuration derived from the scenario; requires a game block.
GameConfig make_game_config(const ScenarioConfig& cfg, unsigned threads);

}  // namespace fpgame
